"""Synthetic multi-turn hybrid dialogs for overfit and determinism runs.

Queries are shared between voices: the same user query gets a different
response per agent voice, so a model can only fit the set by reading the
injected speaker vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dialog_state import Turn, assemble_context, average_speaker_embeddings
from .interleaver import InterleaveConfig
from .model import Example
from .responses import build_response
from .token_space import VocabSpec


@dataclass
class SyntheticDialog:
    dialog_id: str
    history: list[Turn]
    query: Turn
    agent: np.ndarray
    user: np.ndarray
    text: list[int]
    frames: list[tuple[int, ...]]
    agent_ref: int = 0

    @property
    def response_turn(self) -> Turn:
        return Turn("assistant", tuple(self.text), tuple(self.frames), speaker_ref=f"voice-{self.agent_ref}")


def make_voices(count: int, dim: int, rng: np.random.Generator, samples: int = 100) -> list[np.ndarray]:
    """Per-voice agent embeddings averaged from noisy per-utterance samples."""
    voices = []
    for _ in range(count):
        center = rng.normal(size=dim)
        draws = center + 0.3 * rng.normal(size=(samples, dim))
        voices.append(average_speaker_embeddings(draws).vector)
    return voices


def make_dialogs(
    spec: VocabSpec,
    count: int = 32,
    voices: int = 2,
    speaker_dim: int = 16,
    seed: int = 0,
    query_len: int = 3,
    text_len: tuple[int, int] = (3, 6),
    frames_len: tuple[int, int] = (3, 8),
    history_every: int = 4,
) -> list[SyntheticDialog]:
    rng = np.random.default_rng(seed)
    content = np.asarray(spec.content_text_ids)
    voice_vecs = make_voices(voices, speaker_dim, rng)
    n_queries = -(-count // voices)
    dialogs = []
    for q in range(n_queries):
        query = Turn("user", tuple(int(x) for x in rng.choice(content, size=query_len)), speaker_ref=f"user-{q}")
        user_vec = rng.normal(size=speaker_dim)
        user_vec /= np.linalg.norm(user_vec)
        history: list[Turn] = []
        if history_every and q % history_every == 0:
            history = [
                Turn("user", tuple(int(x) for x in rng.choice(content, size=2))),
                Turn("assistant", tuple(int(x) for x in rng.choice(content, size=2))),
            ]
        for v in range(voices):
            if len(dialogs) == count:
                break
            T = int(rng.integers(frames_len[0], frames_len[1] + 1))
            frames = [
                tuple(int(rng.integers(0, size - 1)) for size in spec.codebook_sizes) for _ in range(T)
            ]
            n_text = int(rng.integers(text_len[0], text_len[1] + 1))
            text = [int(x) for x in rng.choice(content, size=n_text)]
            dialogs.append(
                SyntheticDialog(f"d{len(dialogs):03d}", history, query, voice_vecs[v], user_vec, text, frames, agent_ref=v)
            )
    return dialogs


def prompt_items(d: SyntheticDialog, spec: VocabSpec, inject: bool = True, agent=None) -> list:
    agent = d.agent if agent is None else agent
    return assemble_context(d.history, d.query, spec, agent_emb=agent, user_emb=d.user, inject=inject).items


def to_example(d: SyntheticDialog, spec: VocabSpec, cfg: InterleaveConfig, inject: bool = True) -> Example:
    prompt = prompt_items(d, spec, inject=inject)
    return Example(prompt + build_response(d.text, d.frames, cfg, spec))


def to_examples(dialogs: Sequence[SyntheticDialog], spec: VocabSpec, cfg: InterleaveConfig, inject: bool = True) -> list[Example]:
    return [to_example(d, spec, cfg, inject=inject) for d in dialogs]
