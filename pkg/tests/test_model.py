import numpy as np
import pytest
import torch

from hybrid_slm import synthetic
from hybrid_slm.dialog_state import FeatureVector, SpeakerSlot
from hybrid_slm.hybrid_loss import hybrid_nll
from hybrid_slm.interleaver import InterleaveConfig
from hybrid_slm.model import (
    Example,
    HybridLM,
    ModelConfig,
    ModelError,
    NonFiniteLoss,
    StageConfig,
    batch_loss,
    finite_difference_check,
    grad_check,
    make_batch,
    train,
    train_step,
)
from hybrid_slm.token_space import AudioFrame, Text, VocabSpec

SPEC = VocabSpec(text_size=64, codebook_sizes=(32,) * 4)
SCHEDULE = InterleaveConfig(2, 6)


def tiny(dtype="float64", **kw):
    return HybridLM(ModelConfig(SPEC, layers=2, d_model=32, attn_heads=4, max_seq=96, dtype=dtype, **kw))


@pytest.fixture(scope="module")
def dialogs():
    return synthetic.make_dialogs(SPEC, count=32, seed=0)


@pytest.fixture(scope="module")
def examples(dialogs):
    return synthetic.to_examples(dialogs, SPEC, SCHEDULE)


def test_config_validation_and_roundtrip(tmp_path):
    with pytest.raises(ModelError, match="divisible"):
        ModelConfig(SPEC, d_model=30, attn_heads=4)
    with pytest.raises(ModelError, match="max_seq"):
        ModelConfig(SPEC, max_seq=0)
    cfg = ModelConfig(SPEC, layers=3, d_model=48, attn_heads=6, seed=7, dtype="float32")
    cfg.save(tmp_path / "m.cfg")
    assert ModelConfig.load(tmp_path / "m.cfg") == cfg
    assert VocabSpec.load(tmp_path / "m.cfg") == SPEC


def test_stage_config_validation():
    with pytest.raises(ModelError):
        StageConfig(trainable="heads-only")
    with pytest.raises(ModelError):
        StageConfig(lr=-1)


def test_output_shapes_and_normalization(examples):
    model = tiny()
    items = examples[0].items
    lp0, lps = model.forward_items(items)
    assert lp0.shape == (1, len(items), SPEC.head0_size)
    assert [lp.shape[-1] for lp in lps] == [32, 32, 32]
    for lp in [lp0, *lps]:
        assert torch.allclose(lp.exp().sum(-1), torch.ones(1, len(items), dtype=torch.float64), atol=1e-12, rtol=0)
    lp0, lps = tiny("float32").forward_items(items)
    for lp in [lp0, *lps]:
        assert torch.allclose(lp.exp().sum(-1), torch.ones(1, len(items)), atol=1e-6, rtol=0)


def test_causality(examples):
    model = tiny()
    items = list(examples[0].items)
    base = model.predict(items)
    for t in (3, len(items) // 2, len(items) - 2):
        changed = list(items)
        changed[t + 1] = Text(60) if not isinstance(items[t + 1], Text) or items[t + 1].id != 60 else Text(61)
        pred = model.predict(changed)
        for k in range(t + 1):
            assert np.array_equal(pred[k].head0, base[k].head0)
            assert all(np.array_equal(a, b) for a, b in zip(pred[k].heads, base[k].heads))
        assert not np.array_equal(pred[t + 1].head0, base[t + 1].head0)


def test_seeded_determinism(examples):
    items = examples[1].items
    a, b = tiny(seed=3).predict(items), tiny(seed=3).predict(items)
    assert all(np.array_equal(x.head0, y.head0) for x, y in zip(a, b))
    c = tiny(seed=4).predict(items)
    assert not np.array_equal(a[0].head0, c[0].head0)


def test_overlong_input():
    model = HybridLM(ModelConfig(SPEC, d_model=32, max_seq=4))
    with pytest.raises(ModelError, match="max_seq"):
        model.forward_items([Text(7)] * 5)


def test_embedding_mean_rule():
    one = HybridLM(ModelConfig(VocabSpec(text_size=10, codebook_sizes=(8,)), d_model=8, attn_heads=2))
    assert torch.equal(one.embed_hybrid(AudioFrame((3,))), one.codebook_emb[0].weight[3])

    two = HybridLM(ModelConfig(VocabSpec(text_size=10, codebook_sizes=(8, 8)), d_model=8, attn_heads=2))
    with torch.no_grad():
        e = torch.arange(8, dtype=torch.float64)
        two.codebook_emb[0].weight[2] = e
        two.codebook_emb[1].weight[5] = -e
    assert torch.equal(two.embed_hybrid(AudioFrame((2, 5))), torch.zeros(8, dtype=torch.float64))

    four = HybridLM(ModelConfig(VocabSpec(text_size=10, codebook_sizes=(8,) * 4), d_model=8, attn_heads=2))
    got = four.embed_hybrid(AudioFrame((7, 7, 4, 7)))
    want = (3 * four.pad_emb + four.codebook_emb[2].weight[4]) / 4
    assert torch.allclose(got, want, atol=1e-15, rtol=0)
    assert torch.equal(four.embed_hybrid(Text(6)), four.text_emb.weight[6])
    with pytest.raises(ValueError):
        four.embed_hybrid(AudioFrame((8, 0, 0, 0)))


def test_inject_speaker_toggle(dialogs):
    model = tiny()
    d = dialogs[0]
    base = synthetic.prompt_items(d, SPEC, inject=False)
    assert model.inject_speaker(base, d.agent, d.user, enabled=False) == base
    injected = model.inject_speaker(base, d.agent, d.user)
    assert len(injected) == len(base) + 2
    assert injected[-1] == SpeakerSlot("assistant", d.agent)
    assert len(model.inject_speaker(base, d.agent)) == len(base) + 1
    with pytest.raises(ModelError, match="shape"):
        model.inject_speaker(base, np.ones(5))


def test_speaker_vector_changes_post_injection_predictions(dialogs):
    model = tiny()
    d = dialogs[0]
    a = model.predict(synthetic.prompt_items(d, SPEC, agent=dialogs[0].agent))
    b = model.predict(synthetic.prompt_items(d, SPEC, agent=dialogs[1].agent))
    assert np.array_equal(a[-2].head0, b[-2].head0)
    assert not np.array_equal(a[-1].head0, b[-1].head0)


def test_torch_loss_matches_hybrid_nll(examples):
    model = tiny()
    for ex in examples[:6]:
        mask = ex.resolved_mask(SPEC)
        preds = model.predict(ex.items[:-1])
        ref, _ = hybrid_nll(preds, ex.items[1:], mask[1:], SPEC)
        with torch.no_grad():
            got = float(batch_loss(model, make_batch([ex], model.cfg)))
        assert got == pytest.approx(ref, abs=1e-10, rel=0)


def test_packed_rows_match_separate_rows(examples):
    model = tiny()
    with torch.no_grad():
        separate = float(batch_loss(model, make_batch(examples[:4], model.cfg)))
        packed = float(batch_loss(model, make_batch(examples[:4], model.cfg, packs=[[0, 1], [2, 3]])))
    assert packed == pytest.approx(separate, abs=1e-10, rel=0)


def _snapshot(model):
    return {k: v.clone() for k, v in model.state_dict().items()}


def test_adapter_only_stage_freezes_everything_else(examples):
    model = tiny()
    feature_ex = []
    for ex in examples[:4]:
        items = list(ex.items)
        items.insert(2, FeatureVector(np.linspace(-1, 1, model.cfg.adapter_in_dim)))
        feature_ex.append(Example(items))
    before = _snapshot(model)
    train_step(model, make_batch(feature_ex, model.cfg), StageConfig("adapter-only", lr=0.5))
    after = model.state_dict()
    for name in before:
        same = torch.equal(before[name], after[name])
        assert same != name.startswith("feature_adapter"), name


def test_adapter_backbone_stage_keeps_speaker_adapter(examples):
    model = tiny()
    before = _snapshot(model)
    train_step(model, make_batch(examples[:4], model.cfg), StageConfig("adapter+backbone", lr=0.5))
    after = model.state_dict()
    assert all(torch.equal(before[k], after[k]) for k in before if k.startswith("speaker_adapter"))
    assert not torch.equal(before["head0.weight"], after["head0.weight"])


def test_zero_learning_rate_changes_nothing(examples):
    model = tiny()
    before = _snapshot(model)
    loss = train_step(model, make_batch(examples[:4], model.cfg), StageConfig(lr=0.0))
    assert loss > 0
    assert all(torch.equal(before[k], v) for k, v in model.state_dict().items())


def test_non_finite_loss_aborts_step(examples):
    model = tiny()
    with torch.no_grad():
        model.head0.bias[0] = float("nan")
    before = _snapshot(model)
    with pytest.raises(NonFiniteLoss):
        train_step(model, make_batch(examples[:4], model.cfg), StageConfig(lr=0.1))
    after = model.state_dict()
    assert all(torch.equal(before[k], after[k]) or k == "head0.bias" for k in before)


def test_smoke_loss_decreases(examples):
    curve = train(tiny("float32"), examples, StageConfig(lr=0.1, steps=51, batch_size=32), seed=0)
    decreasing = sum(b < a for a, b in zip(curve, curve[1:]))
    assert decreasing >= 45


def test_minibatch_training_is_seeded(examples):
    runs = [train(tiny("float32"), examples, StageConfig(lr=0.1, steps=5, batch_size=8), seed=1) for _ in range(2)]
    assert runs[0] == runs[1]


def test_quadratic_gradient_check_is_exact():
    w = torch.tensor([0.3, -1.2, 2.0, 0.7], dtype=torch.float64, requires_grad=True)
    c = torch.tensor([1.0, 0.5, -0.25, 3.0], dtype=torch.float64)

    def fn():
        return ((w - c) ** 2).sum()

    assert finite_difference_check(fn, [w], epsilon=1e-3, n_coords=4) < 1e-7


def test_grad_check_tiny_model(examples):
    assert grad_check(tiny(), examples[:4], epsilon=1e-4, n_coords=200) < 1e-4


def test_grad_check_rejects_bad_epsilon_and_precision(examples):
    with pytest.raises(ValueError, match="epsilon"):
        grad_check(tiny(), examples[:2], epsilon=0)
    with pytest.raises(ModelError, match="float64"):
        grad_check(tiny("float32"), examples[:2])
