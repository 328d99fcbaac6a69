import numpy as np
import pytest

from hybrid_slm.checkpoint import MAGIC, CheckpointError, load_checkpoint, read_header, save_checkpoint
from hybrid_slm.model import HybridLM, ModelConfig
from hybrid_slm.token_space import Text, VocabSpec

CFG = ModelConfig(VocabSpec(text_size=16, codebook_sizes=(8, 8)), d_model=16, attn_heads=2, max_seq=12, seed=2)


def test_byte_stable(tmp_path):
    save_checkpoint(HybridLM(CFG), tmp_path / "a.ckpt", extra={"schedule": [2, 6]})
    save_checkpoint(HybridLM(CFG), tmp_path / "b.ckpt", extra={"schedule": [2, 6]})
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_roundtrip_preserves_outputs(tmp_path):
    model = HybridLM(CFG)
    save_checkpoint(model, tmp_path / "m.ckpt")
    loaded = load_checkpoint(tmp_path / "m.ckpt")
    assert loaded.cfg == CFG
    items = [Text(3), Text(7), Text(9)]
    for a, b in zip(model.predict(items), loaded.predict(items)):
        assert np.array_equal(a.head0, b.head0)


def test_header_contents(tmp_path):
    save_checkpoint(HybridLM(CFG), tmp_path / "m.ckpt", extra={"inject": True})
    header, start = read_header(tmp_path / "m.ckpt")
    assert header["version"] == 1 and header["extra"] == {"inject": True}
    assert header["config"]["d_model"] == 16 and header["config"]["codebook_sizes"] == [8, 8]
    names = [p["name"] for p in header["params"]]
    assert names == sorted(names)
    assert start > len(MAGIC)


def test_bad_files(tmp_path):
    (tmp_path / "junk").write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError, match="magic"):
        read_header(tmp_path / "junk")
    save_checkpoint(HybridLM(CFG), tmp_path / "m.ckpt")
    raw = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "t.ckpt").write_bytes(raw[:-10])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "t.ckpt")
