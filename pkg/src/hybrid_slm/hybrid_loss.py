"""Hybrid negative log-likelihood over interleaved text/audio targets.

Text positions score ``-log p_head0(y)``. Audio positions score the mean over
the ``J`` codebooks, ``-(1/J) * sum_j log p_j(z^j)``, with layer 0 read from
the audio block of the unified first head. Delay pads are skipped (they add
zero but the divisor stays ``J``), except the first layer-0 pad after the last
frame: that cell is the stream-end signal and is scored against
``VocabSpec.audio_end_label()``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .token_space import AudioFrame, Text, VocabSpec, check_token

NORM_TOL = 1e-9


class LossError(ValueError):
    pass


@dataclass
class PositionPrediction:
    """Distributions emitted at one position: unified head 0 plus heads 1..J-1."""

    head0: np.ndarray
    heads: tuple[np.ndarray, ...] = ()


def stream_end_positions(seq: Sequence, spec: VocabSpec) -> set[int]:
    """Indices of audio columns whose layer-0 pad directly follows a real layer-0 token."""
    pad0 = spec.pad_audio_id[0]
    ends = set()
    prev_real = False
    for k, item in enumerate(seq):
        if not isinstance(item, AudioFrame):
            continue
        is_pad = item.ids[0] == pad0
        if is_pad and prev_real:
            ends.add(k)
        prev_real = not is_pad
    return ends


def target_labels(item, spec: VocabSpec, stream_end: bool = False) -> list[int | None]:
    """Per-head labels for one target; ``None`` marks an unscored head.

    Index 0 is a unified head-0 id, index ``j`` an id in codebook ``j``.
    Text targets only use index 0.
    """
    if isinstance(item, Text):
        return [item.id]
    pads = spec.pad_audio_id
    labels: list[int | None] = []
    for j, a in enumerate(item.ids):
        if j == 0:
            if stream_end:
                labels.append(spec.audio_end_label())
            else:
                labels.append(None if a == pads[0] else spec.text_size + a)
        else:
            labels.append(None if a == pads[j] else a)
    return labels


def _check_distribution(p: np.ndarray, size: int, where: str) -> None:
    if p.shape != (size,):
        raise LossError(f"{where}: expected {size} probabilities, got shape {p.shape}")
    if np.any(p < 0) or abs(float(p.sum()) - 1.0) > NORM_TOL:
        raise LossError(f"{where}: not a normalized distribution (sum={float(p.sum())!r})")


def hybrid_nll(
    preds: Sequence[PositionPrediction],
    targets: Sequence,
    mask: Sequence,
    spec: VocabSpec,
) -> tuple[float, list[float]]:
    """Total and per-position hybrid NLL; unscored positions contribute exactly 0."""
    if not (len(preds) == len(targets) == len(mask)):
        raise LossError(
            f"length mismatch: {len(preds)} predictions, {len(targets)} targets, {len(mask)} mask entries"
        )
    J = spec.num_codebooks
    ends = stream_end_positions(targets, spec)
    per_position: list[float] = []
    total = 0.0
    for t, (pred, target, scored) in enumerate(zip(preds, targets, mask)):
        if not scored:
            per_position.append(0.0)
            continue
        if not isinstance(target, (Text, AudioFrame)):
            raise LossError(f"position {t}: scored target is not a hybrid token: {target!r}")
        check_token(target, spec)
        head0 = np.asarray(pred.head0, dtype=np.float64)
        _check_distribution(head0, spec.head0_size, f"position {t} head 0")
        labels = target_labels(target, spec, stream_end=t in ends)
        if isinstance(target, Text):
            loss = -math.log(head0[labels[0]]) if head0[labels[0]] > 0 else math.inf
        else:
            if all(label is None for label in labels):
                raise LossError(f"position {t}: all-pad audio target at a scored position")
            if len(pred.heads) != J - 1:
                raise LossError(f"position {t}: expected {J - 1} auxiliary heads, got {len(pred.heads)}")
            acc = 0.0
            for j, label in enumerate(labels):
                if label is None:
                    continue
                if j == 0:
                    p = head0[label]
                else:
                    dist = np.asarray(pred.heads[j - 1], dtype=np.float64)
                    _check_distribution(dist, spec.codebook_sizes[j], f"position {t} head {j}")
                    p = dist[label]
                acc += math.log(p) if p > 0 else -math.inf
            loss = -acc / J
        per_position.append(loss)
        total += loss
    return total, per_position


def mean_per_token(total: float, mask: Sequence) -> float:
    scored = sum(bool(m) for m in mask)
    return total / scored if scored else 0.0


def build_response_mask(seq: Sequence, spec: VocabSpec, last_turn_only: bool = True) -> list[int]:
    """Score assistant-response tokens; markers, BOS, other roles and slots stay 0.

    With ``last_turn_only`` only the final assistant turn is scored, so
    compacted history answers are context, not targets.
    """
    markers = set(spec.role_marker_ids)
    role_of = []
    role = None
    for k, item in enumerate(seq):
        if isinstance(item, Text) and item.id in markers:
            role = item.id
            role_of.append(None)
            continue
        if isinstance(item, Text) and item.id == spec.bos_id and role is None:
            role_of.append(None)
            continue
        if not isinstance(item, (Text, AudioFrame)):
            role_of.append(None)
            continue
        if role is None:
            raise LossError(f"position {k}: content before any turn marker")
        role_of.append(role)
    mask = [int(r == spec.assistant_id) for r in role_of]
    if last_turn_only:
        last_marker = max(
            (k for k, item in enumerate(seq) if isinstance(item, Text) and item.id == spec.assistant_id),
            default=None,
        )
        if last_marker is not None:
            mask = [m if k > last_marker else 0 for k, m in enumerate(mask)]
    return mask
