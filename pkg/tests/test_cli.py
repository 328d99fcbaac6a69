import json
import subprocess
import sys

import numpy as np
import pytest

from hybrid_slm import acceptance, corpus_io
from hybrid_slm.cli import main
from hybrid_slm.hybrid_loss import PositionPrediction, hybrid_nll
from hybrid_slm.token_space import VocabSpec


def write(path, records):
    path.write_text("".join(corpus_io.dumps(r) + "\n" for r in records))
    return str(path)


@pytest.fixture
def pairs(tmp_path):
    rng = np.random.default_rng(0)
    recs = [
        {"id": f"r{k}", "text": rng.integers(6, 60, size=int(rng.integers(0, 9))).tolist(),
         "frames": rng.integers(0, 31, size=(int(rng.integers(0, 12)), 4)).tolist()}
        for k in range(20)
    ]
    return write(tmp_path / "pairs.jsonl", recs)


def test_interleave_deinterleave_byte_roundtrip(tmp_path, pairs):
    hyb, back = tmp_path / "hyb.jsonl", tmp_path / "back.jsonl"
    assert main(["interleave", "--input", pairs, "--n", "2", "--m", "3", "--output", str(hyb)]) == 0
    first = json.loads(hyb.read_text().splitlines()[0])
    assert set(first) == {"id", "text", "frames", "schedule", "layout"} and first["schedule"] == [2, 3]
    assert main(["deinterleave", "--input", str(hyb), "--output", str(back)]) == 0
    assert back.read_bytes() == open(pairs, "rb").read()


def test_delay_undelay_byte_roundtrip(tmp_path, pairs):
    cfg = tmp_path / "vocab.cfg"
    VocabSpec(text_size=64, codebook_sizes=(32,) * 4).save(cfg)
    grid, back = tmp_path / "grid.jsonl", tmp_path / "back.jsonl"
    assert main(["delay", "--input", pairs, "--config", str(cfg), "--codebooks", "4", "--output", str(grid)]) == 0
    rec = json.loads(grid.read_text().splitlines()[0])
    assert "grid" in rec and "frames" not in rec and len(rec["grid"]) == 4
    assert main(["undelay", "--input", str(grid), "--pad", "31", "--output", str(back)]) == 0
    assert back.read_bytes() == open(pairs, "rb").read()


def test_undelay_rejects_bad_grid(tmp_path, capsys):
    path = write(tmp_path / "g.jsonl", [{"grid": [[1, 31, 2], [31, 3, 4]]}])
    assert main(["undelay", "--input", path, "--pad", "31"]) == 1
    assert "pad inside" in capsys.readouterr().err


def test_loss_report_matches_library(tmp_path, capsys):
    spec = VocabSpec(text_size=10, codebook_sizes=(5, 5))
    cfg = tmp_path / "vocab.cfg"
    spec.save(cfg)
    rec = corpus_io.hybrid_record([7, 8, 1], [[1, 4], [3, 2], [4, 0]], acceptance.OVERFIT_SCHEDULE)
    rng = np.random.default_rng(1)
    L = 6
    head0 = rng.dirichlet(np.ones(15), size=L)
    heads = [rng.dirichlet(np.ones(5), size=L)]
    recs = write(tmp_path / "recs.jsonl", [rec])
    preds = write(tmp_path / "preds.jsonl", [{"head0": head0.tolist(), "heads": [h.tolist() for h in heads]}])
    assert main(["loss", "--records", recs, "--predictions", preds, "--config", str(cfg)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "metric\tvalue\tcount"
    seq, _ = corpus_io.record_to_hybrid(rec)
    ref, _ = hybrid_nll([PositionPrediction(head0[t], (heads[0][t],)) for t in range(L)], seq, [1] * L, spec)
    name, value, count = out[1].split("\t")
    assert name == "hybrid_nll_total" and float(value) == pytest.approx(ref, rel=1e-9) and count == "6"


def test_pack_manifest(tmp_path, capsys):
    path = write(tmp_path / "lens.jsonl", [{"id": "a", "length": 4000}, {"id": "b", "length": 3000}, {"id": "c", "length": 5000}])
    assert main(["pack", "--input", path]) == 0
    packs = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert [[s["record"] for s in p["segments"]] for p in packs] == [["a", "b"], ["c"]]
    assert all(p["capacity"] == 10_000 for p in packs)


def test_pack_rejects_oversized(tmp_path, capsys):
    path = write(tmp_path / "lens.jsonl", [{"id": "huge", "length": 11}])
    assert main(["pack", "--input", path, "--capacity", "10"]) == 1
    assert "huge" in capsys.readouterr().err


def test_metrics_report(tmp_path, capsys):
    path = write(tmp_path / "m.jsonl", [
        {"metric": "wer", "ref": "the cat sat down", "hyp": "the dog sat down"},
        {"metric": "wer", "ref": "a b", "hyp": "a b"},
        {"metric": "cer", "ref": "abcd", "hyp": "abed"},
        {"metric": "speaker_similarity", "ref": [1, 0], "hyp": [1, 1]},
        {"metric": "contour", "ref": [100, 200, 150], "hyp": [100, 200, 150, 120]},
    ])
    assert main(["metrics", "--input", path]) == 0
    rows = {line.split("\t")[0]: line.split("\t")[1:] for line in capsys.readouterr().out.splitlines()[1:]}
    assert rows["wer"] == ["0.125", "2"]
    assert rows["cer"] == ["0.25", "1"]
    assert float(rows["speaker_similarity"][0]) == pytest.approx(0.70711, abs=5e-6)
    assert {"contour_mse", "contour_dtw"} <= set(rows)


def test_duplex_sim_golden(tmp_path):
    out = tmp_path / "log.jsonl"
    trace = str(acceptance.GOLDEN / "happy_path.trace.jsonl")
    assert main(["duplex-sim", "--trace", trace, "--output", str(out)]) == 0
    assert out.read_text() == (acceptance.GOLDEN / "happy_path.log.jsonl").read_text()


def test_duplex_sim_with_suite(tmp_path, capsys):
    trace = write(tmp_path / "t.jsonl", [{"kind": "speech_start", "segment": None}, {"kind": "speech_end", "segment": 1}])
    suite = tmp_path / "suite.json"
    suite.write_text(json.dumps({"transcripts": {"1": "hi"}, "responses": {"hi": ["hello"]}}))
    assert main(["duplex-sim", "--trace", trace, "--suite", str(suite)]) == 0
    kinds = [json.loads(line)["kind"] for line in capsys.readouterr().out.splitlines()]
    assert kinds == ["transcribe", "detect_turn", "start_generation", "emit", "commit_turn"]


def test_duplex_sim_protocol_violation(tmp_path, capsys):
    trace = write(tmp_path / "t.jsonl", [{"kind": "response_done", "segment": 1}])
    assert main(["duplex-sim", "--trace", trace]) == 1
    assert "illegal" in capsys.readouterr().err


def test_gradcheck(capsys):
    assert main(["gradcheck", "--coords", "30", "--dialogs", "2"]) == 0
    name, value, count = capsys.readouterr().out.split()
    assert name == "max_relative_error" and float(value) < 1e-4 and count == "30"


def test_train_and_generate(tmp_path):
    cfg, corpus, speakers = tmp_path / "m.cfg", tmp_path / "d.jsonl", tmp_path / "s.jsonl"
    assert main(["init-config", "--out", str(cfg), "--d-model", "16"]) == 0
    assert main(["synth", "--config", str(cfg), "--count", "4", "--corpus", str(corpus), "--speakers", str(speakers)]) == 0
    ckpt, curve = tmp_path / "m.ckpt", tmp_path / "curve.tsv"
    assert main(["train-toy", "--config", str(cfg), "--corpus", str(corpus), "--speakers", str(speakers),
                 "--out", str(ckpt), "--curve", str(curve), "--steps", "3", "--n", "2", "--m", "6",
                 "--pack-capacity", "96"]) == 0
    assert curve.read_text().splitlines()[0] == "step\tloss" and len(curve.read_text().splitlines()) == 4
    out = tmp_path / "gen.jsonl"
    assert main(["generate", "--checkpoint", str(ckpt), "--prompt", str(corpus), "--speakers", str(speakers),
                 "--max-items", "12", "--output", str(out)]) == 0
    recs = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(recs) == 4
    assert {"dialog", "text", "frames", "schedule", "layout", "truncated"} <= set(recs[0])
    assert recs[0]["schedule"] == [2, 6]


def test_exit_codes(tmp_path, capsys):
    assert main(["no-such-command"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main(["interleave", "--input", "x", "--n", "2", "--m", "3", "--bogus"]) == 1
    assert main(["interleave", "--input", str(tmp_path / "missing.jsonl"), "--n", "2", "--m", "3"]) == 2
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"text": [1], "frames": []}\n{"text": \n')
    assert main(["interleave", "--input", str(bad), "--n", "2", "--m", "3"]) == 1
    assert "line 2" in capsys.readouterr().err


def test_module_entry_point_and_help():
    proc = subprocess.run([sys.executable, "-m", "hybrid_slm", "frobnicate"], capture_output=True, text=True)
    assert proc.returncode == 1 and "usage" in proc.stderr
    proc = subprocess.run([sys.executable, "-m", "hybrid_slm", "train-toy", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for flag in ("--seed", "--config", "--corpus", "--steps", "--lr", "--trainable", "--no-speaker"):
        assert flag in proc.stdout
