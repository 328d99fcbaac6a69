"""Evaluation primitives: error rates, speaker similarity, pitch-contour distances."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class EditCounts:
    distance: int
    substitutions: int
    insertions: int
    deletions: int


def edit_distance(ref: Sequence, hyp: Sequence) -> EditCounts:
    """Unit-cost Levenshtein distance with a substitution/insertion/deletion split.

    Insertions are hypothesis symbols with no reference counterpart, deletions
    the reverse.
    """
    n, m = len(ref), len(hyp)
    d = [list(range(m + 1))]
    for i in range(1, n + 1):
        prev, row = d[-1], [i]
        r = ref[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1] + (r != hyp[j - 1])
            dele = prev[j] + 1
            ins = row[j - 1] + 1
            row.append(sub if sub <= dele and sub <= ins else (dele if dele <= ins else ins))
        d.append(row)
    i, j = n, m
    s = ins = dels = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and d[i][j] == d[i - 1][j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditCounts(d[n][m], int(s), ins, dels)


def _words(x) -> list:
    return x.split() if isinstance(x, str) else list(x)


def wer(ref_tokens, hyp_tokens) -> float:
    ref, hyp = _words(ref_tokens), _words(hyp_tokens)
    if not ref:
        raise MetricError("empty reference")
    return edit_distance(ref, hyp).distance / len(ref)


def cer(ref: str, hyp: str) -> float:
    if not ref:
        raise MetricError("empty reference")
    return edit_distance(list(ref), list(hyp)).distance / len(ref)


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"width mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise MetricError("cosine similarity of a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def normalize_contour(raw, voiced=None) -> np.ndarray:
    """Z-score the voiced frames of a pitch track; unvoiced frames are dropped."""
    raw = np.asarray(raw, dtype=np.float64)
    if voiced is None:
        voiced = np.ones(len(raw), dtype=bool)
    voiced = np.asarray(voiced, dtype=bool)
    if voiced.shape != raw.shape:
        raise MetricError("voiced mask length differs from the contour")
    values = raw[voiced]
    if len(values) < 2:
        raise MetricError(f"need at least 2 voiced values, got {len(values)}")
    if not np.all(np.isfinite(values)):
        raise MetricError("non-finite pitch values")
    sd = values.std()
    if sd == 0:
        raise MetricError("zero spread: constant contour cannot be normalized")
    return (values - values.mean()) / sd


def resample(x: np.ndarray, length: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if len(x) == length:
        return x.copy()
    if len(x) == 1:
        return np.full(length, x[0])
    return np.interp(np.linspace(0, len(x) - 1, length), np.arange(len(x)), x)


def contour_mse(a, b) -> float:
    """MSE after linearly resampling the shorter contour to the longer length."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise MetricError("empty contour")
    L = max(len(a), len(b))
    return float(np.mean((resample(a, L) - resample(b, L)) ** 2))


def dtw_distance(a, b, normalize: bool = False) -> float:
    """DTW with steps (1,0), (0,1), (1,1) and absolute-difference cost.

    With ``normalize`` the accumulated cost is divided by the number of cells
    on the optimal path (shortest such path on ties).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        raise MetricError("empty contour")
    a, b = a.tolist(), b.tolist()
    inf = float("inf")
    # each cell keeps (accumulated cost, path length); tuple order breaks ties by length
    prev = [(inf, 0)] * m
    for i in range(n):
        row = []
        for j in range(m):
            c = abs(a[i] - b[j])
            if i == 0 and j == 0:
                row.append((c, 1))
                continue
            best = min(
                prev[j],
                row[j - 1] if j else (inf, 0),
                prev[j - 1] if j else (inf, 0),
            )
            row.append((best[0] + c, best[1] + 1))
        prev = row
    total, length = prev[-1]
    return total / length if normalize else total
