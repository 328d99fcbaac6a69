"""Block interleaving of text tokens and audio frames at an ``n:m`` ratio.

The response stream alternates ``n`` text tokens with ``m`` audio frames.
Once one modality runs out, everything left of the other is appended in one
contiguous run. A short final block is emitted as-is, never padded.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .token_space import AudioFrame, HybridToken, Text, as_token

TEXT = "text"
AUDIO = "audio"

HybridSeq = list[HybridToken]


@dataclass(frozen=True)
class InterleaveConfig:
    n: int = 4
    m: int = 12

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError(f"block sizes must be >= 1, got n={self.n}, m={self.m}")


def modality_at(
    counts: tuple[int, int],
    cfg: InterleaveConfig,
    total: tuple[int | None, int | None] = (None, None),
) -> str:
    """Modality of the next element given how many of each were already emitted.

    ``total`` holds the final text/audio counts when known; ``None`` means
    unbounded. Generation fixes the text total the moment text EOS is emitted,
    after which this always answers ``"audio"``.
    """
    text_used, audio_used = counts
    text_total, audio_total = total
    if text_total is not None and text_used >= text_total:
        return AUDIO
    if audio_total is not None and audio_used >= audio_total:
        return TEXT
    if text_used % cfg.n:
        return TEXT
    blocks_done = text_used // cfg.n
    return AUDIO if audio_used < blocks_done * cfg.m else TEXT


def layout(n_text: int, n_audio: int, cfg: InterleaveConfig) -> list[str]:
    """Modality sequence :func:`interleave` produces for the given counts."""
    out = []
    t = a = 0
    while t < n_text or a < n_audio:
        kind = modality_at((t, a), cfg, (n_text, n_audio))
        out.append(kind)
        if kind == TEXT:
            t += 1
        else:
            a += 1
    return out


def interleave(Y: Iterable, Z: Iterable, cfg: InterleaveConfig) -> HybridSeq:
    """Interleave text ids ``Y`` with audio frames ``Z`` in ``n:m`` blocks."""
    text = [t if isinstance(t, Text) else Text(int(t)) for t in Y]
    audio = [f if isinstance(f, AudioFrame) else AudioFrame(tuple(f)) for f in Z]
    out: HybridSeq = []
    ti = ai = 0
    while ti < len(text) or ai < len(audio):
        if ti >= len(text):
            out.extend(audio[ai:])
            break
        if ai >= len(audio):
            out.extend(text[ti:])
            break
        out.extend(text[ti:ti + cfg.n])
        ti += cfg.n
        if ti < len(text):
            out.extend(audio[ai:ai + cfg.m])
            ai += cfg.m
    return out


def deinterleave(S: Sequence) -> tuple[list[int], list[tuple[int, ...]]]:
    """Split a hybrid sequence back into text ids and audio frames, in order."""
    Y: list[int] = []
    Z: list[tuple[int, ...]] = []
    for item in S:
        tok = as_token(item)
        if isinstance(tok, Text):
            Y.append(tok.id)
        else:
            Z.append(tok.ids)
    return Y, Z


def check_schedule(S: Sequence, cfg: InterleaveConfig) -> int | None:
    """Return ``None`` if ``S`` follows the ``n:m`` layout, else the first bad index."""
    kinds = [TEXT if isinstance(as_token(x), Text) else AUDIO for x in S]
    expected = layout(kinds.count(TEXT), kinds.count(AUDIO), cfg)
    for i, (got, want) in enumerate(zip(kinds, expected)):
        if got != want:
            return i
    return None


def layout_string(S: Sequence) -> str:
    return "".join("T" if isinstance(as_token(x), Text) else "A" for x in S)
