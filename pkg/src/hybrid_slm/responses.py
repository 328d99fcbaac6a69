"""Response stream construction: text + EOS interleaved with delayed audio columns."""

from __future__ import annotations

from typing import Sequence

from .delay_pattern import apply_delay, grid_from_columns, invert_delay
from .interleaver import InterleaveConfig, check_schedule, deinterleave, interleave
from .token_space import VocabSpec


def build_response(text: Sequence[int], frames: Sequence[Sequence[int]], cfg: InterleaveConfig, spec: VocabSpec) -> list:
    """``text`` gets ``eos_text`` appended; ``frames`` are delayed then interleaved column-wise."""
    grid = apply_delay(frames, spec.num_codebooks, spec.pad_audio_id)
    return interleave(list(text) + [spec.eos_text_id], grid.columns(), cfg)


def split_response(response: Sequence, cfg: InterleaveConfig, spec: VocabSpec) -> tuple[list[int], list[tuple[int, ...]]]:
    """Inverse of :func:`build_response`; validates layout, EOS and the delay grid."""
    bad = check_schedule(response, cfg)
    if bad is not None:
        raise ValueError(f"response breaks the {cfg.n}:{cfg.m} schedule at position {bad}")
    text, columns = deinterleave(response)
    if not text or text[-1] != spec.eos_text_id:
        raise ValueError("response text does not end with eos_text")
    frames = invert_delay(grid_from_columns(columns, spec.num_codebooks, spec.pad_audio_id))
    return text[:-1], frames
