"""Schedule-driven hybrid decoding.

The ``n:m`` schedule decides whether the next step is text or audio. A text
step samples head 0 over the text block. An audio step emits one column of
the delayed grid: layer ``j`` is forced to pad for the first ``j`` columns and
for the trailing flush, otherwise head ``j`` picks it. Head 0 may end the
layer-0 stream by emitting the stream-end label; the remaining layers then
flush for ``J - 1`` more columns.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch

from .delay_pattern import DelayGrid, grid_from_columns, invert_delay
from .interleaver import AUDIO, TEXT, InterleaveConfig, deinterleave, modality_at
from .model import HybridLM
from .token_space import AudioFrame, Text, VocabSpec


@dataclass
class GenerationResult:
    response: list
    truncated: bool

    def grid(self, spec: VocabSpec) -> DelayGrid:
        _, columns = deinterleave(self.response)
        return grid_from_columns(columns, spec.num_codebooks, spec.pad_audio_id)

    def text(self) -> list[int]:
        return deinterleave(self.response)[0]

    def frames(self, spec: VocabSpec) -> list[tuple[int, ...]]:
        return invert_delay(self.grid(spec))


def allowed_ids(spec: VocabSpec) -> dict[str, list[int]]:
    """Candidate ids per decision: text steps, layer 0 while live, and layers 1..J-1."""
    blocked = {spec.bos_id, spec.eos_audio_id, *spec.role_marker_ids}
    out = {
        "text": [i for i in range(spec.text_size) if i not in blocked],
        "audio0": [spec.text_size + a for a in range(spec.codebook_sizes[0] - 1)] + [spec.audio_end_label()],
    }
    for j in range(1, spec.num_codebooks):
        out[f"layer{j}"] = list(range(spec.codebook_sizes[j] - 1))
    return out


def _pick(logp: torch.Tensor, candidates: list[int], temperature: float | None, gen: torch.Generator) -> int:
    idx = torch.tensor(candidates)
    scores = logp[idx]
    if temperature is None:
        return candidates[int(torch.argmax(scores))]
    probs = torch.softmax(scores.double() / temperature, dim=-1)
    return candidates[int(torch.multinomial(probs, 1, generator=gen))]


def generate(
    model: HybridLM,
    prompt: Sequence,
    cfg: InterleaveConfig,
    decode: str = "greedy",
    temperature: float = 1.0,
    max_items: int = 256,
    seed: int = 0,
) -> GenerationResult:
    """Decode a response after ``prompt``; stops when both streams have ended."""
    if max_items < 1:
        raise ValueError("max_items must be >= 1")
    if decode not in ("greedy", "temperature"):
        raise ValueError(f"unknown decode mode {decode!r}")
    if decode == "temperature" and not temperature > 0:
        raise ValueError("temperature must be positive")
    tau = None if decode == "greedy" else temperature
    spec = model.cfg.vocab
    J = spec.num_codebooks
    pads = spec.pad_audio_id
    allowed = allowed_ids(spec)
    end_label = spec.audio_end_label()
    gen = torch.Generator().manual_seed(seed)

    prompt = list(prompt)
    out: list = []
    text_used = columns = 0
    text_total = audio_total = frames_end = None
    model.eval()
    while text_total is None or audio_total is None:
        if len(out) >= max_items or len(prompt) + len(out) >= model.cfg.max_seq:
            return GenerationResult(out, truncated=True)
        kind = modality_at((text_used, columns), cfg, (text_total, audio_total))
        with torch.no_grad():
            lp0, lps = model.forward_items(prompt + out)
        if kind == TEXT:
            tok = _pick(lp0[0, -1], allowed["text"], tau, gen)
            out.append(Text(tok))
            text_used += 1
            if tok == spec.eos_text_id:
                text_total = text_used
            continue
        assert kind == AUDIO
        if frames_end is None:
            uid = _pick(lp0[0, -1], allowed["audio0"], tau, gen)
            if uid == end_label:
                frames_end = columns
                first = pads[0]
            else:
                first = uid - spec.text_size
        else:
            first = pads[0]
        if frames_end is not None and (frames_end == 0 or columns >= frames_end + J - 1):
            audio_total = columns
            continue
        ids = [first]
        for j in range(1, J):
            if columns < j or (frames_end is not None and columns >= frames_end + j):
                ids.append(pads[j])
            else:
                ids.append(_pick(lps[j - 1][0, -1], allowed[f"layer{j}"], tau, gen))
        out.append(AudioFrame(tuple(ids)))
        columns += 1
        if frames_end is not None and columns >= frames_end + J - 1:
            audio_total = columns
    return GenerationResult(out, truncated=False)
