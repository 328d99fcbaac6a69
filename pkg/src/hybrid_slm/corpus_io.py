"""Line-delimited JSON records and fixed-capacity sequence packing."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .interleaver import InterleaveConfig, check_schedule, deinterleave, interleave, layout_string


class RecordError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class PackingError(ValueError):
    def __init__(self, offenders: Sequence, capacity: int):
        self.offenders = list(offenders)
        names = ", ".join(f"{rid} (length {n})" for rid, n in self.offenders)
        super().__init__(f"records longer than capacity {capacity}: {names}")


def dumps(record: Mapping) -> str:
    return json.dumps(record, separators=(", ", ": "))


def write_records(path: str | Path, records: Iterable[Mapping]) -> None:
    with open(path, "w") as f:
        for rec in records:
            f.write(dumps(rec) + "\n")


def parse_records(lines: Iterable[str], required: Sequence[str] = ()) -> list[dict]:
    out = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise RecordError(f"malformed record: {e.msg}", lineno) from None
        if not isinstance(rec, dict):
            raise RecordError("record is not an object", lineno)
        missing = [k for k in required if k not in rec]
        if missing:
            raise RecordError(f"missing field(s) {missing}", lineno)
        out.append(rec)
    return out


def read_records(path: str | Path, required: Sequence[str] = ()) -> list[dict]:
    with open(path) as f:
        return parse_records(f, required)


# --------------------------------------------------------------------------
# hybrid sequences


def hybrid_record(text: Sequence[int], frames: Sequence[Sequence[int]], cfg: InterleaveConfig, **extra) -> dict:
    seq = interleave(text, frames, cfg)
    rec = {
        "text": [int(t) for t in text],
        "frames": [[int(a) for a in f] for f in frames],
        "schedule": [cfg.n, cfg.m],
        "layout": layout_string(seq),
    }
    rec.update(extra)
    return rec


def record_to_hybrid(rec: Mapping, line: int | None = None) -> tuple[list, InterleaveConfig]:
    try:
        n, m = rec["schedule"]
        cfg = InterleaveConfig(int(n), int(m))
        seq = interleave(rec["text"], rec["frames"], cfg)
    except (KeyError, TypeError, ValueError) as e:
        raise RecordError(f"bad hybrid record: {e}", line) from None
    widths = {len(f) for f in rec["frames"]}
    if len(widths) > 1:
        raise RecordError(f"frames have mixed widths {sorted(widths)}", line)
    if "layout" in rec and rec["layout"] != layout_string(seq):
        raise RecordError("layout field disagrees with the schedule", line)
    return seq, cfg


def hybrid_to_pair(seq: Sequence) -> dict:
    text, frames = deinterleave(seq)
    return {"text": text, "frames": [list(f) for f in frames]}


def validate_hybrid(seq: Sequence, cfg: InterleaveConfig) -> None:
    bad = check_schedule(seq, cfg)
    if bad is not None:
        raise RecordError(f"schedule violation at position {bad}")


# --------------------------------------------------------------------------
# packing


@dataclass(frozen=True)
class Segment:
    record: object
    start: int
    end: int
    segment: int


@dataclass
class PackedSequence:
    capacity: int
    segments: list[Segment] = field(default_factory=list)

    @property
    def fill(self) -> int:
        return sum(s.end - s.start for s in self.segments)

    def to_record(self) -> dict:
        return {
            "capacity": self.capacity,
            "fill": self.fill,
            "segments": [
                {"record": s.record, "start": s.start, "end": s.end, "segment": s.segment} for s in self.segments
            ],
        }

    def segment_ids(self) -> list[int]:
        """Per-token segment id, ``-1`` on unused capacity."""
        ids = [-1] * self.capacity
        for s in self.segments:
            ids[s.start:s.end] = [s.segment] * (s.end - s.start)
        return ids


def pack_sequences(records: Sequence, capacity: int = 10_000) -> list[PackedSequence]:
    """Greedy in-order packing: append while the record fits, else open a new pack.

    ``records`` are ``(record_id, length)`` pairs or bare lengths (ids become
    indices).
    """
    if capacity < 1:
        raise ValueError("capacity must be >= 1")
    items = [(i, r) if isinstance(r, int) else (r[0], int(r[1])) for i, r in enumerate(records)]
    offenders = [(rid, n) for rid, n in items if n > capacity]
    if offenders:
        raise PackingError(offenders, capacity)
    packs: list[PackedSequence] = []
    current = None
    for rid, n in items:
        if n < 0:
            raise ValueError(f"record {rid} has negative length")
        if current is None or current.fill + n > capacity:
            current = PackedSequence(capacity)
            packs.append(current)
        start = current.fill
        current.segments.append(Segment(rid, start, start + n, len(current.segments)))
    return packs
