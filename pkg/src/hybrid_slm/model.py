"""Desk-scale decoder-only transformer with multi-codebook heads.

Input positions are embedded by kind: text ids through the text table, audio
columns as the mean of their ``J`` per-codebook embeddings (delay pads use a
shared learned pad vector), speaker slots through the speaker adapter and
continuous features through the two-layer adapter MLP. Blocks are pre-norm
with learned absolute positions. Head 0 predicts over the unified
``[text | layer-0 audio]`` vocabulary; heads ``1..J-1`` read the same final
hidden state and predict codebooks ``1..J-1``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from . import kvfile
from .dialog_state import FeatureVector, SpeakerSlot, insert_speaker_slots
from .hybrid_loss import PositionPrediction, build_response_mask, stream_end_positions, target_labels
from .token_space import AudioFrame, Text, VocabSpec, check_token

KIND_TEXT, KIND_AUDIO, KIND_SPEAKER, KIND_FEATURE = 0, 1, 2, 3

PARAM_GROUPS = ("adapter", "speaker", "backbone")
STAGES = {
    "adapter-only": ("adapter",),
    "adapter+backbone": ("adapter", "backbone"),
    "all": ("adapter", "speaker", "backbone"),
}


class ModelError(ValueError):
    pass


class NonFiniteLoss(ArithmeticError):
    pass


@dataclass
class ModelConfig:
    vocab: VocabSpec = field(default_factory=VocabSpec)
    layers: int = 2
    d_model: int = 32
    attn_heads: int = 4
    max_seq: int = 128
    speaker_dim: int = 16
    adapter_in_dim: int = 24
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if self.layers < 1:
            raise ModelError("need at least one transformer block")
        if self.attn_heads < 1 or self.d_model % self.attn_heads:
            raise ModelError(f"d_model={self.d_model} is not divisible by attn_heads={self.attn_heads}")
        if self.max_seq < 1:
            raise ModelError("max_seq must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ModelError(f"unsupported dtype {self.dtype!r}")

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32

    def to_config(self) -> dict[str, object]:
        out = {k: v for k, v in asdict(self).items() if k != "vocab"}
        out.update(self.vocab.to_config())
        return out

    @classmethod
    def from_config(cls, values: dict[str, str]) -> "ModelConfig":
        defaults = cls.__dataclass_fields__
        kw = {}
        for key in ("layers", "d_model", "attn_heads", "max_seq", "speaker_dim", "adapter_in_dim", "seed"):
            kw[key] = kvfile.as_int(values, key) if key in values else defaults[key].default
        kw["dtype"] = values.get("dtype", "float64")
        return cls(vocab=VocabSpec.from_config(values), **kw)

    @classmethod
    def load(cls, path) -> "ModelConfig":
        return cls.from_config(kvfile.read_kv(path))

    def save(self, path) -> None:
        from pathlib import Path

        Path(path).write_text(kvfile.format_kv(self.to_config(), header="hybrid_slm model config"))


@dataclass(frozen=True)
class StageConfig:
    trainable: str = "all"
    lr: float = 0.1
    steps: int = 100
    batch_size: int = 32
    optimizer: str = "sgd"

    def __post_init__(self):
        if self.trainable not in STAGES:
            raise ModelError(f"unknown trainable mask {self.trainable!r}; choose from {sorted(STAGES)}")
        if self.optimizer not in ("sgd", "adam"):
            raise ModelError(f"unknown optimizer {self.optimizer!r}")
        if self.lr < 0 or self.steps < 0 or self.batch_size < 1:
            raise ModelError("lr and steps must be >= 0, batch_size >= 1")


# --------------------------------------------------------------------------
# encoding of item lists into index arrays


@dataclass
class EncodedRow:
    kind: np.ndarray          # [L]
    text: np.ndarray          # [L]
    audio: np.ndarray         # [L, J]
    speaker: np.ndarray       # [L, speaker_dim]
    feature: np.ndarray       # [L, adapter_in_dim]
    segment: np.ndarray       # [L]
    position: np.ndarray      # [L]


def encode_items(items: Sequence, cfg: ModelConfig, segment: int = 0) -> EncodedRow:
    spec = cfg.vocab
    L = len(items)
    kind = np.zeros(L, dtype=np.int64)
    text = np.zeros(L, dtype=np.int64)
    audio = np.tile(np.asarray(spec.pad_audio_id, dtype=np.int64), (L, 1))
    speaker = np.zeros((L, cfg.speaker_dim))
    feature = np.zeros((L, cfg.adapter_in_dim))
    for i, item in enumerate(items):
        if isinstance(item, Text):
            check_token(item, spec)
            kind[i], text[i] = KIND_TEXT, item.id
        elif isinstance(item, AudioFrame):
            check_token(item, spec)
            kind[i] = KIND_AUDIO
            audio[i] = item.ids
        elif isinstance(item, SpeakerSlot):
            vec = np.asarray(item.vector, dtype=np.float64)
            if vec.shape != (cfg.speaker_dim,):
                raise ModelError(f"speaker vector has shape {vec.shape}, expected ({cfg.speaker_dim},)")
            kind[i], speaker[i] = KIND_SPEAKER, vec
        elif isinstance(item, FeatureVector):
            vec = np.asarray(item.vector, dtype=np.float64)
            if vec.shape != (cfg.adapter_in_dim,):
                raise ModelError(f"feature vector has shape {vec.shape}, expected ({cfg.adapter_in_dim},)")
            kind[i], feature[i] = KIND_FEATURE, vec
        else:
            raise ModelError(f"cannot embed item {item!r}")
    return EncodedRow(
        kind=kind, text=text, audio=audio, speaker=speaker, feature=feature,
        segment=np.full(L, segment, dtype=np.int64), position=np.arange(L, dtype=np.int64),
    )


def concat_rows(rows: Sequence[EncodedRow]) -> EncodedRow:
    return EncodedRow(*(np.concatenate([getattr(r, f) for r in rows]) for f in EncodedRow.__dataclass_fields__))


@dataclass
class Targets:
    head0: np.ndarray         # [L] unified label or -1
    layers: np.ndarray        # [L, J-1] codebook labels or -1
    weight0: np.ndarray       # [L] weight on the head-0 term


def encode_targets(targets: Sequence, mask: Sequence, spec: VocabSpec) -> Targets:
    """Label arrays for next-item targets; unscored entries get -1."""
    L, J = len(targets), spec.num_codebooks
    head0 = np.full(L, -1, dtype=np.int64)
    layers = np.full((L, max(J - 1, 0)), -1, dtype=np.int64)
    weight0 = np.zeros(L)
    ends = stream_end_positions(targets, spec)
    for t, (item, scored) in enumerate(zip(targets, mask)):
        if not scored or not isinstance(item, (Text, AudioFrame)):
            continue
        labels = target_labels(item, spec, stream_end=t in ends)
        if labels[0] is not None:
            head0[t] = labels[0]
            weight0[t] = 1.0 if isinstance(item, Text) else 1.0 / J
        for j in range(1, len(labels)):
            if labels[j] is not None:
                layers[t, j - 1] = labels[j]
    return Targets(head0, layers, weight0)


@dataclass
class Example:
    """One training sequence: context plus response, with its response mask."""

    items: list
    mask: list[int] | None = None

    def resolved_mask(self, spec: VocabSpec) -> list[int]:
        return self.mask if self.mask is not None else build_response_mask(self.items, spec)


@dataclass
class Batch:
    inputs: dict[str, torch.Tensor]
    head0: torch.Tensor
    layers: torch.Tensor
    weight0: torch.Tensor
    scored: int


def make_batch(examples: Sequence[Example], cfg: ModelConfig, packs=None) -> Batch:
    """Pad examples into rows. ``packs`` (lists of example indices) shares a row across segments."""
    spec = cfg.vocab
    groups = packs if packs is not None else [[i] for i in range(len(examples))]
    enc_rows, tgt_rows = [], []
    scored = 0
    for group in groups:
        row_parts, tgt_parts = [], []
        for seg, idx in enumerate(group):
            ex = examples[idx]
            mask = ex.resolved_mask(spec)
            if len(ex.items) < 2:
                raise ModelError("an example needs at least two items")
            row_parts.append(encode_items(ex.items[:-1], cfg, segment=seg))
            tgt_parts.append(encode_targets(ex.items[1:], mask[1:], spec))
            scored += sum(1 for item, m in zip(ex.items[1:], mask[1:]) if m and isinstance(item, (Text, AudioFrame)))
        enc_rows.append(concat_rows(row_parts))
        tgt_rows.append(Targets(*(np.concatenate([getattr(t, f) for t in tgt_parts]) for f in Targets.__dataclass_fields__)))
    L = max(len(r.kind) for r in enc_rows)
    if L > cfg.max_seq:
        raise ModelError(f"sequence of length {L} exceeds max_seq={cfg.max_seq}")

    def pad(arr, fill):
        width = [(0, L - arr.shape[0])] + [(0, 0)] * (arr.ndim - 1)
        return np.pad(arr, width, constant_values=fill)

    pad_audio = np.asarray(spec.pad_audio_id, dtype=np.int64)
    inputs = {
        "kind": torch.from_numpy(np.stack([pad(r.kind, KIND_TEXT) for r in enc_rows])),
        "text": torch.from_numpy(np.stack([pad(r.text, 0) for r in enc_rows])),
        "audio": torch.from_numpy(np.stack([
            np.concatenate([r.audio, np.tile(pad_audio, (L - len(r.kind), 1))]) for r in enc_rows
        ])),
        "speaker": torch.from_numpy(np.stack([pad(r.speaker, 0.0) for r in enc_rows])),
        "feature": torch.from_numpy(np.stack([pad(r.feature, 0.0) for r in enc_rows])),
        "segment": torch.from_numpy(np.stack([pad(r.segment, -1) for r in enc_rows])),
        "position": torch.from_numpy(np.stack([_segment_positions(pad(r.segment, -1)) for r in enc_rows])),
    }
    return Batch(
        inputs=inputs,
        head0=torch.from_numpy(np.stack([pad(t.head0, -1) for t in tgt_rows])),
        layers=torch.from_numpy(np.stack([pad(t.layers, -1) for t in tgt_rows])),
        weight0=torch.from_numpy(np.stack([pad(t.weight0, 0.0) for t in tgt_rows])),
        scored=scored,
    )


def _segment_positions(segment: np.ndarray) -> np.ndarray:
    pos = np.zeros_like(segment)
    for i in range(1, len(segment)):
        pos[i] = pos[i - 1] + 1 if segment[i] == segment[i - 1] else 0
    return pos


# --------------------------------------------------------------------------
# network


class Block(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.ln1 = nn.LayerNorm(d_model)
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj = nn.Linear(d_model, d_model)
        self.ln2 = nn.LayerNorm(d_model)
        self.mlp = nn.Sequential(nn.Linear(d_model, 4 * d_model), nn.GELU(), nn.Linear(4 * d_model, d_model))

    def forward(self, x: torch.Tensor, allowed: torch.Tensor) -> torch.Tensor:
        B, L, D = x.shape
        H = self.n_heads
        q, k, v = self.qkv(self.ln1(x)).split(D, dim=-1)
        q, k, v = (t.view(B, L, H, D // H).transpose(1, 2) for t in (q, k, v))
        att = (q @ k.transpose(-2, -1)) / math.sqrt(D // H)
        att = att.masked_fill(~allowed[:, None], float("-inf")).softmax(dim=-1)
        y = (att @ v).transpose(1, 2).reshape(B, L, D)
        x = x + self.proj(y)
        return x + self.mlp(self.ln2(x))


class HybridLM(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        spec = cfg.vocab
        d = cfg.d_model
        gen = torch.Generator().manual_seed(cfg.seed)
        torch.manual_seed(cfg.seed)
        self.text_emb = nn.Embedding(spec.text_size, d)
        self.codebook_emb = nn.ModuleList(nn.Embedding(size, d) for size in spec.codebook_sizes)
        self.pad_emb = nn.Parameter(torch.zeros(d))
        self.pos_emb = nn.Parameter(torch.zeros(cfg.max_seq, d))
        self.speaker_adapter = nn.Linear(cfg.speaker_dim, d)
        self.feature_adapter = nn.Sequential(nn.Linear(cfg.adapter_in_dim, d), nn.GELU(), nn.Linear(d, d))
        self.blocks = nn.ModuleList(Block(d, cfg.attn_heads) for _ in range(cfg.layers))
        self.ln_f = nn.LayerNorm(d)
        self.head0 = nn.Linear(d, spec.head0_size)
        self.heads = nn.ModuleList(nn.Linear(d, size) for size in spec.codebook_sizes[1:])
        self.to(cfg.torch_dtype)
        self._init_weights(gen)

    def _init_weights(self, gen: torch.Generator) -> None:
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.endswith(".bias") or name == "pad_emb" or ".ln" in name or name.startswith("ln"):
                    continue
                p.copy_(torch.randn(p.shape, generator=gen, dtype=torch.float64).to(p.dtype) * 0.02)
            self.pad_emb.copy_(torch.randn(self.pad_emb.shape, generator=gen, dtype=torch.float64) * 0.02)

    def param_group(self, name: str) -> str:
        if name.startswith("feature_adapter"):
            return "adapter"
        if name.startswith("speaker_adapter"):
            return "speaker"
        return "backbone"

    # -- embedding

    def embed(self, inputs: dict[str, torch.Tensor]) -> torch.Tensor:
        spec = self.cfg.vocab
        kind = inputs["kind"]
        dtype = self.pos_emb.dtype
        x = self.text_emb(inputs["text"]) * (kind == KIND_TEXT)[..., None].to(dtype)
        audio = inputs["audio"]
        parts = []
        for j, table in enumerate(self.codebook_emb):
            ids = audio[..., j]
            is_pad = (ids == spec.pad_audio_id[j])[..., None]
            parts.append(torch.where(is_pad, self.pad_emb.expand_as(table(ids)), table(ids)))
        audio_mean = torch.stack(parts).mean(dim=0)
        x = x + audio_mean * (kind == KIND_AUDIO)[..., None].to(dtype)
        is_spk = kind == KIND_SPEAKER
        if bool(is_spk.any()):
            x = x + self.speaker_adapter(inputs["speaker"].to(dtype)) * is_spk[..., None].to(dtype)
        is_feat = kind == KIND_FEATURE
        if bool(is_feat.any()):
            x = x + self.feature_adapter(inputs["feature"].to(dtype)) * is_feat[..., None].to(dtype)
        return x

    def embed_hybrid(self, item) -> torch.Tensor:
        """Input embedding of one text token, audio column, slot or feature."""
        row = encode_items([item], self.cfg)
        inputs = {k: torch.from_numpy(getattr(row, k))[None] for k in ("kind", "text", "audio", "speaker", "feature")}
        return self.embed(inputs)[0, 0]

    # -- forward

    def forward(self, inputs: dict[str, torch.Tensor]) -> tuple[torch.Tensor, list[torch.Tensor]]:
        """Log-probabilities of head 0 ``[B, L, |V|+|U0|]`` and heads ``1..J-1``."""
        kind = inputs["kind"]
        B, L = kind.shape
        if L > self.cfg.max_seq:
            raise ModelError(f"input of length {L} exceeds max_seq={self.cfg.max_seq}")
        x = self.embed(inputs) + self.pos_emb[inputs["position"]]
        seg = inputs["segment"]
        causal = torch.ones(L, L, dtype=torch.bool).tril()
        allowed = causal[None] & (seg[:, :, None] == seg[:, None, :])
        for block in self.blocks:
            x = block(x, allowed)
        h = self.ln_f(x)
        return F.log_softmax(self.head0(h), dim=-1), [F.log_softmax(head(h), dim=-1) for head in self.heads]

    def forward_items(self, items: Sequence) -> tuple[torch.Tensor, list[torch.Tensor]]:
        row = encode_items(items, self.cfg)
        inputs = {k: torch.from_numpy(getattr(row, k))[None] for k in EncodedRow.__dataclass_fields__}
        return self(inputs)

    def predict(self, items: Sequence) -> list[PositionPrediction]:
        """Per-position probability distributions for an item sequence."""
        with torch.no_grad():
            lp0, lps = self.forward_items(items)
        p0 = lp0[0].exp().double().numpy()
        ps = [lp[0].exp().double().numpy() for lp in lps]
        return [PositionPrediction(p0[t], tuple(p[t] for p in ps)) for t in range(len(items))]

    def inject_speaker(self, items: Sequence, agent_vec=None, user_vec=None, enabled: bool = True) -> list:
        """Insert speaker slots after the last assistant/user markers; a no-op when disabled."""
        if not enabled:
            return list(items)
        for name, vec in (("agent", agent_vec), ("user", user_vec)):
            if vec is not None and np.asarray(vec).shape != (self.cfg.speaker_dim,):
                raise ModelError(f"{name} vector has shape {np.asarray(vec).shape}, expected ({self.cfg.speaker_dim},)")
        return insert_speaker_slots(items, self.cfg.vocab, agent_vec=agent_vec, user_vec=user_vec).items


def batch_loss(model: HybridLM, batch: Batch) -> torch.Tensor:
    """Summed hybrid NLL over every scored target in the batch."""
    lp0, lps = model(batch.inputs)
    J = model.cfg.vocab.num_codebooks
    valid0 = batch.head0 >= 0
    term0 = lp0.gather(-1, batch.head0.clamp(min=0)[..., None])[..., 0]
    total = -(term0 * batch.weight0.to(term0.dtype) * valid0).sum()
    for j, lp in enumerate(lps):
        labels = batch.layers[..., j]
        valid = labels >= 0
        term = lp.gather(-1, labels.clamp(min=0)[..., None])[..., 0]
        total = total - (term * valid).sum() / J
    return total


def set_trainable(model: HybridLM, trainable: str) -> None:
    groups = STAGES[trainable]
    for name, p in model.named_parameters():
        p.requires_grad_(model.param_group(name) in groups)


def make_optimizer(model: HybridLM, stage: StageConfig) -> torch.optim.Optimizer:
    set_trainable(model, stage.trainable)
    params = [p for p in model.parameters() if p.requires_grad]
    if stage.optimizer == "sgd":
        return torch.optim.SGD(params, lr=stage.lr)
    return torch.optim.Adam(params, lr=stage.lr)


def train_step(model: HybridLM, batch: Batch, stage: StageConfig, optimizer: torch.optim.Optimizer | None = None) -> float:
    """One gradient step on the mean per-token hybrid NLL; returns that loss.

    Parameters outside the stage's trainable groups are left untouched. A
    non-finite loss raises :class:`NonFiniteLoss` before any update.
    """
    if optimizer is None:
        optimizer = make_optimizer(model, stage)
    else:
        set_trainable(model, stage.trainable)
    model.train()
    optimizer.zero_grad(set_to_none=True)
    loss = batch_loss(model, batch) / max(batch.scored, 1)
    value = float(loss.detach())
    if not math.isfinite(value):
        raise NonFiniteLoss(f"non-finite loss {value}; step aborted")
    if stage.lr == 0:
        return value
    loss.backward()
    optimizer.step()
    return value


def train(
    model: HybridLM,
    examples: Sequence[Example],
    stage: StageConfig,
    seed: int = 0,
    packs=None,
    callback=None,
) -> list[float]:
    """Run ``stage.steps`` steps over shuffled minibatches; returns the loss curve."""
    rng = np.random.default_rng(seed)
    optimizer = make_optimizer(model, stage)
    units = packs if packs is not None else [[i] for i in range(len(examples))]
    bs = min(stage.batch_size, len(units))
    full = None
    if bs == len(units):
        full = make_batch(examples, model.cfg, packs=units)
    curve = []
    for step in range(stage.steps):
        if full is not None:
            batch = full
        else:
            pick = rng.choice(len(units), size=bs, replace=False)
            batch = make_batch(examples, model.cfg, packs=[units[i] for i in sorted(pick)])
        loss = train_step(model, batch, stage, optimizer)
        curve.append(loss)
        if callback is not None:
            callback(step, loss)
    return curve


# --------------------------------------------------------------------------
# gradient checking


def finite_difference_check(fn, params: Sequence[torch.Tensor], epsilon: float, n_coords: int = 256, seed: int = 0, floor: float = 1e-8) -> float:
    """Worst relative error between autograd and central differences of ``fn()``.

    Coordinates are sampled uniformly over all entries of ``params``. The
    relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    params = list(params)
    for p in params:
        if p.grad is not None:
            p.grad = None
    value = fn()
    grads = torch.autograd.grad(value, params, allow_unused=True)
    # parameters the loss never touches would only contribute trivial 0 == 0 checks
    used = [(p, g) for p, g in zip(params, grads) if g is not None]
    params, grads = [p for p, _ in used], [g for _, g in used]
    sizes = [p.numel() for p in params]
    offsets = np.cumsum([0] + sizes)
    rng = np.random.default_rng(seed)
    n = min(n_coords, int(offsets[-1]))
    picks = rng.choice(int(offsets[-1]), size=n, replace=False)
    worst = 0.0
    with torch.no_grad():
        for flat in picks:
            pi = int(np.searchsorted(offsets, flat, side="right") - 1)
            idx = int(flat - offsets[pi])
            view = params[pi].view(-1)
            orig = view[idx].item()
            view[idx] = orig + epsilon
            plus = float(fn())
            view[idx] = orig - epsilon
            minus = float(fn())
            view[idx] = orig
            numeric = (plus - minus) / (2 * epsilon)
            analytic = float(grads[pi].reshape(-1)[idx])
            denom = max(abs(analytic), abs(numeric), floor)
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst


def grad_check(model: HybridLM, examples: Sequence[Example], epsilon: float = 1e-4, n_coords: int = 256, seed: int = 0) -> float:
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if model.cfg.dtype != "float64":
        raise ModelError("gradient checks need a float64 model")
    batch = make_batch(examples, model.cfg)
    params = list(model.parameters())
    for p in params:
        p.requires_grad_(True)

    def fn():
        return batch_loss(model, batch) / max(batch.scored, 1)

    return finite_difference_check(fn, params, epsilon, n_coords=n_coords, seed=seed)
