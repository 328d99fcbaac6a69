"""Independent reference computations for cross-checking the main code paths.

Everything here is written from the definitions, deliberately without
reusing the implementations it checks.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np


def interleave_by_blocks(Y: list, Z: list, n: int, m: int) -> list:
    """Literal block construction: alternate chunks, then append the leftover tail."""
    y_blocks = [Y[i:i + n] for i in range(0, len(Y), n)]
    z_blocks = [Z[i:i + m] for i in range(0, len(Z), m)]
    out: list = []
    k = 0
    while k < len(y_blocks) and k < len(z_blocks):
        out += y_blocks[k]
        if k + 1 < len(y_blocks):
            out += z_blocks[k]
        else:
            # text ends inside or at this block: every remaining frame follows
            out += [f for b in z_blocks[k:] for f in b]
            return out
        k += 1
    for b in y_blocks[k:]:
        out += b
    for b in z_blocks[k:]:
        out += b
    return out


def delay_by_formula(frames: list, J: int, pads: tuple) -> list[list[int]]:
    T = len(frames)
    if T == 0:
        return [[] for _ in range(J)]
    return [[frames[c - j][j] if 0 <= c - j < T else pads[j] for c in range(T + J - 1)] for j in range(J)]


def hybrid_nll_reference(head0s, heads, targets, mask, text_size, pads, end_label) -> float:
    """Hybrid NLL summed over scored positions, straight from the definition.

    ``targets`` are ``("text", id)`` or ``("audio", ids)``; ``head0s[t]`` and
    ``heads[t][j-1]`` are probability vectors.
    """
    J = len(pads)
    layer0 = [ids[0] for kind, ids in targets if kind == "audio"]
    audio_positions = [t for t, (kind, _) in enumerate(targets) if kind == "audio"]
    # the stream ends where layer 0 turns from a real id into the pad
    ends = {
        audio_positions[k]
        for k in range(1, len(layer0))
        if layer0[k] == pads[0] and layer0[k - 1] != pads[0]
    }
    total = 0.0
    for t, (kind, value) in enumerate(targets):
        if not mask[t]:
            continue
        if kind == "text":
            total += -math.log(head0s[t][value])
            continue
        logs = []
        for j in range(J):
            if j == 0:
                if t in ends:
                    logs.append(math.log(head0s[t][end_label]))
                elif value[0] != pads[0]:
                    logs.append(math.log(head0s[t][text_size + value[0]]))
            elif value[j] != pads[j]:
                logs.append(math.log(heads[t][j - 1][value[j]]))
        total += -sum(logs) / J
    return total


def edit_distance_batch(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Levenshtein distance for every pair of rows of ``A`` [Na, la] and ``B`` [Nb, lb]."""
    Na, la = A.shape
    Nb, lb = B.shape
    a = np.repeat(A, Nb, axis=0)
    b = np.tile(B, (Na, 1))
    prev = np.tile(np.arange(lb + 1), (Na * Nb, 1))
    for i in range(1, la + 1):
        cur = np.empty_like(prev)
        cur[:, 0] = i
        for j in range(1, lb + 1):
            cur[:, j] = np.minimum(
                np.minimum(prev[:, j] + 1, cur[:, j - 1] + 1),
                prev[:, j - 1] + (a[:, i - 1] != b[:, j - 1]),
            )
        prev = cur
    return prev[:, lb].reshape(Na, Nb)


def all_strings(alphabet_size: int, max_len: int) -> dict[int, np.ndarray]:
    """Every string over ``range(alphabet_size)`` grouped by length."""
    return {
        k: np.array(list(itertools.product(range(alphabet_size), repeat=k)), dtype=np.int64).reshape(alphabet_size**k, k)
        for k in range(max_len + 1)
    }


@lru_cache(maxsize=None)
def monotone_paths(n: int, m: int) -> np.ndarray:
    """Every alignment path from (0,0) to (n-1,m-1) using steps (1,0),(0,1),(1,1).

    Returned as flat cell indices ``i*m + j``, padded with ``n*m`` (a sentinel
    cell of cost 0).
    """
    paths = []

    def walk(i, j, acc):
        acc = acc + [i * m + j]
        if i == n - 1 and j == m - 1:
            paths.append(acc)
            return
        if i + 1 < n:
            walk(i + 1, j, acc)
        if j + 1 < m:
            walk(i, j + 1, acc)
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, acc)

    walk(0, 0, [])
    width = max(len(p) for p in paths)
    return np.array([p + [n * m] * (width - len(p)) for p in paths], dtype=np.int64)


def dtw_enumerate(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Minimum path cost over all monotone paths, for every pair of rows of ``A`` and ``B``."""
    n, m = A.shape[1], B.shape[1]
    paths = monotone_paths(n, m)
    out = np.empty((len(A), len(B)))
    for ia in range(len(A)):
        cost = np.abs(A[ia][None, :, None] - B[:, None, :]).reshape(len(B), n * m)
        cost = np.concatenate([cost, np.zeros((len(B), 1))], axis=1)
        out[ia] = cost[:, paths].sum(axis=2).min(axis=1)
    return out
