"""Staircase delay of codebook layers.

Layer ``j`` is shifted right by ``j`` steps, so a sequence of ``T`` frames
becomes a ``J x (T + J - 1)`` grid whose column ``c`` holds layer ``j`` of
frame ``c - j``. Cells outside each layer's window hold that layer's pad id.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


class DelayError(ValueError):
    pass


def _pads(pad, J: int) -> tuple[int, ...]:
    if isinstance(pad, Sequence):
        pads = tuple(int(p) for p in pad)
        if len(pads) != J:
            raise DelayError(f"expected {J} pad ids, got {len(pads)}")
        return pads
    return (int(pad),) * J


@dataclass(frozen=True)
class DelayGrid:
    rows: tuple[tuple[int, ...], ...]
    pad: tuple[int, ...]

    @property
    def J(self) -> int:
        return len(self.rows)

    @property
    def width(self) -> int:
        return len(self.rows[0]) if self.rows else 0

    @property
    def T(self) -> int:
        return self.width - self.J + 1 if self.width else 0

    def column(self, c: int) -> tuple[int, ...]:
        return tuple(row[c] for row in self.rows)

    def columns(self) -> list[tuple[int, ...]]:
        return [self.column(c) for c in range(self.width)]


def apply_delay(frames: Sequence[Sequence[int]], J: int, pad) -> DelayGrid:
    pads = _pads(pad, J)
    T = len(frames)
    for t, frame in enumerate(frames):
        if len(frame) != J:
            raise DelayError(f"frame {t} has {len(frame)} entries, expected J={J}")
    if T == 0:
        return DelayGrid(rows=tuple(() for _ in range(J)), pad=pads)
    width = T + J - 1
    rows = []
    for j in range(J):
        row = [pads[j]] * width
        for t in range(T):
            row[t + j] = int(frames[t][j])
        rows.append(tuple(row))
    return DelayGrid(rows=tuple(rows), pad=pads)


def grid_from_columns(columns: Sequence[Sequence[int]], J: int, pad) -> DelayGrid:
    pads = _pads(pad, J)
    for c, col in enumerate(columns):
        if len(col) != J:
            raise DelayError(f"column {c} has {len(col)} entries, expected J={J}")
    rows = tuple(tuple(int(col[j]) for col in columns) for j in range(J))
    return DelayGrid(rows=rows, pad=pads)


def invert_delay(grid: DelayGrid) -> list[tuple[int, ...]]:
    """Recover the original frames; raises :class:`DelayError` on a malformed grid."""
    J, width = grid.J, grid.width
    if any(len(row) != width for row in grid.rows):
        raise DelayError("grid rows have unequal lengths")
    if width == 0:
        return []
    T = width - J + 1
    if T < 1:
        raise DelayError(f"width {width} is inconsistent with J={J} (needs at least {J})")
    for j, row in enumerate(grid.rows):
        p = grid.pad[j]
        for c, value in enumerate(row):
            inside = j <= c < j + T
            if inside and value == p:
                raise DelayError(f"pad inside the token window of layer {j} at column {c}")
            if not inside and value != p:
                raise DelayError(f"non-pad value {value} outside the window of layer {j} at column {c}")
    return [tuple(grid.rows[j][t + j] for j in range(J)) for t in range(T)]


def delayed_column(step: int, emitted: DelayGrid | Sequence[Sequence[int]]) -> tuple[int, ...]:
    """Column ``step`` of a (possibly still growing) delayed grid.

    ``emitted`` may be a ragged list of rows during generation; every row must
    already reach past ``step``.
    """
    rows = emitted.rows if isinstance(emitted, DelayGrid) else emitted
    if step < 0:
        raise DelayError(f"negative step {step}")
    for j, row in enumerate(rows):
        if len(row) <= step:
            raise DelayError(f"column {step} not yet emitted for layer {j}")
    return tuple(int(row[step]) for row in rows)


def pad_count(grid: DelayGrid) -> int:
    return sum(v == grid.pad[j] for j, row in enumerate(grid.rows) for v in row)
