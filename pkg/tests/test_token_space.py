import pytest
from hypothesis import given, strategies as st

from hybrid_slm.token_space import (
    AudioFrame,
    Text,
    VocabError,
    VocabSpec,
    check_token,
    from_unified_head0,
    to_unified_head0,
)


def test_default_spec_is_valid():
    spec = VocabSpec(text_size=100, codebook_sizes=(64,) * 8)
    assert spec.num_codebooks == 8
    assert spec.head0_size == 164
    assert spec.pad_audio_id == (63,) * 8


@pytest.mark.parametrize(
    "kwargs, match",
    [
        (dict(text_size=0), "zero-size"),
        (dict(codebook_sizes=()), "J = 0"),
        (dict(codebook_sizes=(64, 0)), "zero-size codebook"),
        (dict(bos_id=1), "duplicate"),
        (dict(role_marker_ids=(3, 4, 3)), "duplicate"),
        (dict(text_size=5), "outside text vocabulary"),
        (dict(audio_eos="sometimes"), "audio_eos"),
    ],
)
def test_invalid_specs(kwargs, match):
    with pytest.raises(VocabError, match=match):
        VocabSpec(**kwargs)


def test_unified_head0_examples():
    spec = VocabSpec(text_size=100, codebook_sizes=(50,) * 8)
    assert to_unified_head0(Text(7), spec) == 7
    assert to_unified_head0(AudioFrame((3,) + (0,) * 7), spec) == 103
    with pytest.raises(VocabError):
        to_unified_head0(AudioFrame((50,) + (0,) * 7), spec)
    assert from_unified_head0(7, spec) == ("text", 7)
    assert from_unified_head0(103, spec) == ("audio0", 3)
    with pytest.raises(VocabError):
        from_unified_head0(150, spec)
    with pytest.raises(VocabError):
        from_unified_head0(-1, spec)


@pytest.mark.parametrize("V, U0", [(7, 1), (8, 8), (100, 50), (256, 256)])
def test_unified_head0_exhaustive_bijection(V, U0):
    spec = VocabSpec(text_size=V, codebook_sizes=(U0, 4))
    seen = {}
    for t in range(V):
        uid = to_unified_head0(Text(t), spec)
        seen[uid] = ("text", t)
    for a in range(U0):
        uid = to_unified_head0(AudioFrame((a, 0)), spec)
        seen[uid] = ("audio0", a)
    assert len(seen) == V + U0
    assert sorted(seen) == list(range(spec.head0_size))
    for uid, pair in seen.items():
        assert from_unified_head0(uid, spec) == pair


@given(st.integers(7, 300), st.integers(1, 300), st.data())
def test_unified_roundtrip_property(V, U0, data):
    spec = VocabSpec(text_size=V, codebook_sizes=(U0,))
    uid = data.draw(st.integers(0, V + U0 - 1))
    modality, local = from_unified_head0(uid, spec)
    token = Text(local) if modality == "text" else AudioFrame((local,))
    assert to_unified_head0(token, spec) == uid


def test_audio_frame_arity_is_checked():
    spec = VocabSpec(text_size=10, codebook_sizes=(4, 4))
    check_token(AudioFrame((0, 3)), spec)
    with pytest.raises(VocabError, match="expected 2"):
        check_token(AudioFrame((0,)), spec)
    with pytest.raises(VocabError, match="out of range"):
        check_token(AudioFrame((0, 4)), spec)


def test_audio_end_label_modes():
    assert VocabSpec(text_size=10, codebook_sizes=(4,)).audio_end_label() == 2
    assert VocabSpec(text_size=10, codebook_sizes=(4,), audio_eos="implicit").audio_end_label() == 13


def test_config_roundtrip(tmp_path):
    spec = VocabSpec(text_size=64, codebook_sizes=(32, 16, 8), audio_eos="implicit")
    path = tmp_path / "vocab.cfg"
    spec.save(path)
    text = path.read_text()
    for key in ("text_size", "codebook_sizes", "pad_audio_id", "num_codebooks", "role_marker_ids"):
        assert f"{key} =" in text
    assert VocabSpec.load(path) == spec


def test_config_rejects_inconsistent_pad(tmp_path):
    path = tmp_path / "vocab.cfg"
    VocabSpec(text_size=64, codebook_sizes=(32, 32)).save(path)
    path.write_text(path.read_text().replace("pad_audio_id = 31, 31", "pad_audio_id = 0, 31"))
    with pytest.raises(VocabError, match="pad_audio_id"):
        VocabSpec.load(path)


def test_content_ids_exclude_reserved():
    spec = VocabSpec(text_size=10, codebook_sizes=(4,))
    assert spec.content_text_ids == [6, 7, 8, 9]
