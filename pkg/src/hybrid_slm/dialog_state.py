"""Multi-turn conversation state and context assembly.

History keeps user turns verbatim but drops the speech of assistant turns,
keeping only their text. The assembled model context is::

    [system turn?] [history turns...] <user> [user slot] query <assistant> [agent slot]

where slots are virtual positions that carry speaker vectors into the model.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .token_space import AudioFrame, Text, VocabSpec

ROLES = ("user", "assistant", "system")


class DialogError(ValueError):
    pass


class ContextOverflow(DialogError):
    def __init__(self, length: int, max_seq: int):
        self.length = length
        self.max_seq = max_seq
        self.overflow = length - max_seq
        super().__init__(f"context needs {length} positions, max_seq is {max_seq}: {self.overflow} over")


@dataclass(frozen=True)
class Turn:
    role: str
    text: tuple[int, ...] = ()
    audio: tuple[tuple[int, ...], ...] | None = None
    speaker_ref: str | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise DialogError(f"unknown role {self.role!r}")
        object.__setattr__(self, "text", tuple(int(t) for t in self.text))
        if self.audio is not None:
            object.__setattr__(self, "audio", tuple(tuple(int(a) for a in f) for f in self.audio))
            if self.role == "system":
                raise DialogError("system turns cannot carry audio")


@dataclass(frozen=True, eq=False)
class SpeakerSlot:
    """Virtual context position filled by a projected speaker vector."""

    role: str
    vector: np.ndarray

    def __eq__(self, other):
        return (
            isinstance(other, SpeakerSlot)
            and self.role == other.role
            and np.array_equal(self.vector, other.vector)
        )


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """Continuous input feature routed through the adapter MLP."""

    vector: np.ndarray

    def __eq__(self, other):
        return isinstance(other, FeatureVector) and np.array_equal(self.vector, other.vector)


@dataclass(frozen=True)
class SpeakerEmbedding:
    vector: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))


@dataclass
class Context:
    items: list
    slots: dict[str, int] = field(default_factory=dict)


def compact_history(turns: Sequence[Turn]) -> list[Turn]:
    return [replace(t, audio=None) if t.role == "assistant" else t for t in turns]


def average_speaker_embeddings(samples: Sequence[Sequence[float]]) -> SpeakerEmbedding:
    """Mean of the samples, renormalized to unit length."""
    if len(samples) == 0:
        raise DialogError("no speaker samples to average")
    widths = {len(s) for s in samples}
    if len(widths) != 1:
        raise DialogError(f"speaker samples have mismatched widths {sorted(widths)}")
    mean = np.mean(np.asarray(samples, dtype=np.float64), axis=0)
    if not np.all(np.isfinite(mean)):
        raise DialogError("non-finite speaker samples")
    norm = np.linalg.norm(mean)
    if norm == 0.0:
        raise DialogError("mean speaker embedding has zero norm")
    return SpeakerEmbedding(mean / norm)


def _marker(role: str, spec: VocabSpec) -> Text:
    return Text({"user": spec.user_id, "assistant": spec.assistant_id, "system": spec.system_id}[role])


def turn_items(turn: Turn, spec: VocabSpec) -> list:
    items: list = [_marker(turn.role, spec)]
    items.extend(Text(t) for t in turn.text)
    if turn.audio:
        items.extend(AudioFrame(f) for f in turn.audio)
    return items


def _as_vector(emb) -> np.ndarray | None:
    if emb is None:
        return None
    if isinstance(emb, SpeakerEmbedding):
        return np.asarray(emb.vector, dtype=np.float64)
    return np.asarray(emb, dtype=np.float64)


def insert_speaker_slots(items: Sequence, spec: VocabSpec, agent_vec=None, user_vec=None) -> Context:
    """Insert speaker slots right after the last user and last assistant markers."""
    out = list(items)
    slots: dict[str, int] = {}
    targets = [("user", spec.user_id, _as_vector(user_vec)), ("assistant", spec.assistant_id, _as_vector(agent_vec))]
    # insert the later marker first so the earlier index stays valid
    found = []
    for role, marker_id, vec in targets:
        if vec is None:
            continue
        idx = max((k for k, it in enumerate(out) if isinstance(it, Text) and it.id == marker_id), default=None)
        if idx is None:
            raise DialogError(f"no {role} marker to attach a speaker vector to")
        found.append((idx, role, vec))
    for idx, role, vec in sorted(found, reverse=True):
        out.insert(idx + 1, SpeakerSlot(role, vec))
    for k, it in enumerate(out):
        if isinstance(it, SpeakerSlot):
            slots["agent" if it.role == "assistant" else "user"] = k
    return Context(out, slots)


def assemble_context(
    history: Sequence[Turn],
    query: Turn,
    spec: VocabSpec,
    agent_emb=None,
    user_emb=None,
    inject: bool = True,
    max_seq: int | None = None,
    reserve: int = 0,
) -> Context:
    """Build the model-ready context; ``reserve`` positions are kept free for the reply."""
    if query.role != "user":
        raise DialogError("the current query must be a user turn")
    turns = compact_history(history)
    items: list = []
    for turn in turns:
        items.extend(turn_items(turn, spec))
    items.extend(turn_items(query, spec))
    items.append(_marker("assistant", spec))
    if inject:
        ctx = insert_speaker_slots(items, spec, agent_vec=agent_emb, user_vec=user_emb)
    else:
        ctx = Context(items)
    if max_seq is not None and len(ctx.items) + reserve > max_seq:
        raise ContextOverflow(len(ctx.items) + reserve, max_seq)
    return ctx


def assemble_truncated(
    history: Sequence[Turn],
    query: Turn,
    spec: VocabSpec,
    max_seq: int,
    reserve: int = 0,
    **kwargs,
) -> tuple[Context, int]:
    """Like :func:`assemble_context` but drops oldest non-system turns until it fits.

    Returns the context and how many turns were dropped.
    """
    history = list(history)
    system = [t for t in history[:1] if t.role == "system"]
    rest = history[len(system):]
    for dropped in range(len(rest) + 1):
        try:
            ctx = assemble_context(system + rest[dropped:], query, spec, max_seq=max_seq, reserve=reserve, **kwargs)
        except ContextOverflow:
            continue
        return ctx, dropped
    # even the bare query does not fit
    return assemble_context(system, query, spec, max_seq=max_seq, reserve=reserve, **kwargs), len(rest)


def turn_to_record(turn: Turn, **extra) -> dict:
    rec: dict = {"role": turn.role, "text": list(turn.text)}
    if turn.audio is not None:
        rec["frames"] = [list(f) for f in turn.audio]
    if turn.speaker_ref is not None:
        rec["speaker_ref"] = turn.speaker_ref
    rec.update(extra)
    return rec


def turn_from_record(rec: Mapping) -> Turn:
    try:
        return Turn(
            role=rec["role"],
            text=tuple(rec["text"]),
            audio=None if rec.get("frames") is None else tuple(tuple(f) for f in rec["frames"]),
            speaker_ref=rec.get("speaker_ref"),
        )
    except KeyError as e:
        raise DialogError(f"turn record missing field {e.args[0]!r}") from None


@dataclass
class DialogRecord:
    dialog: str
    history: list[Turn]
    query: Turn
    response: Turn | None


def dialogs_from_records(records: Sequence[Mapping]) -> list[DialogRecord]:
    """Group turn records by their ``dialog`` field, keeping first-seen order.

    The final turn of a dialog is the response when it is an assistant turn;
    the user turn before it is the query; everything earlier is history.
    """
    grouped: dict[str, list[Turn]] = {}
    for rec in records:
        grouped.setdefault(str(rec.get("dialog", "")), []).append(turn_from_record(rec))
    out = []
    for name, turns in grouped.items():
        response = turns[-1] if turns and turns[-1].role == "assistant" else None
        rest = turns[:-1] if response is not None else turns
        if not rest or rest[-1].role != "user":
            raise DialogError(f"dialog {name!r} has no user query before its response")
        out.append(DialogRecord(name, rest[:-1], rest[-1], response))
    return out
