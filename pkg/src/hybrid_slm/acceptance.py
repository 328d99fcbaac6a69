"""Acceptance criteria, runnable from the CLI and from pytest.

Each ``criterion_k`` returns ``(passed, detail)``; :func:`run_all` times them
and fails any criterion that exceeds its runtime budget.
"""

from __future__ import annotations

import random
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import duplex, metrics, oracles
from .corpus_io import pack_sequences
from .delay_pattern import apply_delay, invert_delay, pad_count
from .hybrid_loss import PositionPrediction, hybrid_nll
from .interleaver import InterleaveConfig, check_schedule, deinterleave, interleave
from .token_space import AudioFrame, Text, VocabSpec

GOLDEN = Path(__file__).with_name("golden")
GOLDEN_TRACES = ("happy_path", "empty_transcript", "barge_in")

OVERFIT_VOCAB = VocabSpec(text_size=64, codebook_sizes=(32,) * 4)
OVERFIT_SCHEDULE = InterleaveConfig(2, 6)


@dataclass
class Result:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float
    budget: float | None

    def line(self) -> str:
        budget = f" (budget {self.budget:g} s)" if self.budget else ""
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:>2} {self.name}: {self.detail} [{self.seconds:.1f} s{budget}]"


# --------------------------------------------------------------------------
# 1-3: sequence layout and loss


def criterion_1(cases: int = 1000, seed: int = 0):
    rng = random.Random(seed)
    for case in range(cases):
        cfg = InterleaveConfig(rng.randint(1, 16), rng.randint(1, 16))
        Y = [rng.randrange(100) for _ in range(rng.randint(0, 512))]
        Z = [(rng.randrange(64), rng.randrange(64)) for _ in range(rng.randint(0, 512))]
        S = interleave(Y, Z, cfg)
        if deinterleave(S) != (Y, Z):
            return False, f"case {case}: roundtrip mismatch"
        if check_schedule(S, cfg) is not None:
            return False, f"case {case}: schedule violation at {check_schedule(S, cfg)}"
        if S != oracles.interleave_by_blocks([Text(y) for y in Y], [AudioFrame(z) for z in Z], cfg.n, cfg.m):
            return False, f"case {case}: disagrees with block construction"
    return True, f"{cases} cases roundtrip, pass check_schedule and match block construction"


def criterion_2(cases: int = 1000, seed: int = 0):
    rng = random.Random(seed)
    for case in range(cases):
        J = rng.choice((1, 2, 4, 8))
        T = rng.randint(1, 256)
        pads = tuple(rng.randint(2, 64) for _ in range(J))
        frames = [tuple(rng.randrange(pads[j]) for j in range(J)) for _ in range(T)]
        grid = apply_delay(frames, J, pads)
        if [list(r) for r in grid.rows] != oracles.delay_by_formula(frames, J, pads):
            return False, f"case {case}: grid differs from the shift formula"
        if invert_delay(grid) != frames:
            return False, f"case {case}: roundtrip mismatch"
        if pad_count(grid) != J * (J - 1):
            return False, f"case {case}: {pad_count(grid)} pads, expected {J * (J - 1)}"
    return True, f"{cases} grids roundtrip with J(J-1) pads"


def _random_loss_instance(rng: np.random.Generator):
    V = int(rng.integers(7, 9))
    J = int(rng.integers(1, 5))
    sizes = tuple(int(rng.integers(2, 7)) for _ in range(J))
    spec = VocabSpec(text_size=V, codebook_sizes=sizes, audio_eos=str(rng.choice(["token", "implicit"])))
    pads = spec.pad_audio_id
    T = int(rng.integers(1, 7))
    seq = []
    for _ in range(T):
        if rng.random() < 0.4:
            seq.append(Text(int(rng.integers(V))))
        else:
            ids = tuple(pads[j] if rng.random() < 0.3 else int(rng.integers(sizes[j] - 1)) for j in range(J))
            seq.append(AudioFrame(ids))
    mask = [int(rng.random() < 0.8) for _ in range(T)]
    # an all-pad column is only scorable when it is the stream end
    prev_real = False
    for t, item in enumerate(seq):
        if isinstance(item, AudioFrame):
            end = item.ids[0] == pads[0] and prev_real
            if all(a == p for a, p in zip(item.ids, pads)) and not end:
                mask[t] = 0
            prev_real = item.ids[0] != pads[0]

    def dist(k):
        p = rng.random(k) + 0.01
        return p / p.sum()

    preds = [PositionPrediction(dist(spec.head0_size), tuple(dist(sizes[j]) for j in range(1, J))) for _ in range(T)]
    return spec, seq, mask, preds


def criterion_3(cases: int = 500, seed: int = 0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for case in range(cases):
        spec, seq, mask, preds = _random_loss_instance(rng)
        total, per = hybrid_nll(preds, seq, mask, spec)
        ref = oracles.hybrid_nll_reference(
            [p.head0 for p in preds],
            [p.heads for p in preds],
            [("text", it.id) if isinstance(it, Text) else ("audio", it.ids) for it in seq],
            mask,
            spec.text_size,
            spec.pad_audio_id,
            spec.audio_end_label(),
        )
        worst = max(worst, abs(total - ref))
        if not abs(total - ref) <= 1e-10:
            return False, f"case {case}: {total!r} vs reference {ref!r}"
        if total != sum(per):
            return False, f"case {case}: total is not the sum of per-position losses"
    return True, f"{cases} instances, max |diff| {worst:.2e} <= 1e-10"


# --------------------------------------------------------------------------
# 4-6: toy model


def criterion_4(seed: int = 0, n_coords: int = 256):
    from . import synthetic
    from .model import HybridLM, ModelConfig, grad_check

    cfg = ModelConfig(OVERFIT_VOCAB, layers=2, d_model=32, attn_heads=4, max_seq=96, seed=seed, dtype="float64")
    model = HybridLM(cfg)
    dialogs = synthetic.make_dialogs(cfg.vocab, count=4, speaker_dim=cfg.speaker_dim, seed=seed)
    err = grad_check(model, synthetic.to_examples(dialogs, cfg.vocab, OVERFIT_SCHEDULE), epsilon=1e-4, n_coords=n_coords, seed=seed)
    return err < 1e-4, f"max relative error {err:.2e} over {n_coords} coordinates (< 1e-4)"


@dataclass
class OverfitRun:
    model: object
    dialogs: list
    curve: list[float]
    seconds: float


OVERFIT_STEPS = 2000


@lru_cache(maxsize=1)
def overfit_run(seed: int = 0) -> OverfitRun:
    """Train the toy model on the 32 synthetic dialogs once per process."""
    import torch

    from . import synthetic
    from .model import HybridLM, ModelConfig, StageConfig, train

    torch.set_num_threads(1)
    torch.manual_seed(seed)
    cfg = ModelConfig(OVERFIT_VOCAB, layers=2, d_model=64, attn_heads=4, max_seq=96, seed=seed, dtype="float32")
    dialogs = synthetic.make_dialogs(cfg.vocab, count=32, speaker_dim=cfg.speaker_dim, seed=seed)
    examples = synthetic.to_examples(dialogs, cfg.vocab, OVERFIT_SCHEDULE)
    model = HybridLM(cfg)
    start = time.perf_counter()
    curve = train(model, examples, StageConfig("all", lr=0.3, steps=OVERFIT_STEPS, batch_size=32), seed=seed)
    return OverfitRun(model, dialogs, curve, time.perf_counter() - start)


def response_accuracy(model, dialogs, inject: bool = True) -> tuple[float, list[str]]:
    """Item-level accuracy of greedy responses against the memorized ones, plus layout problems."""
    from . import synthetic
    from .generation import generate
    from .responses import build_response

    spec = model.cfg.vocab
    hits = total = 0
    problems = []
    for d in dialogs:
        ref = build_response(d.text, d.frames, OVERFIT_SCHEDULE, spec)
        res = generate(model, synthetic.prompt_items(d, spec, inject=inject), OVERFIT_SCHEDULE, max_items=2 * len(ref) + 8)
        hits += sum(a == b for a, b in zip(res.response, ref))
        total += len(ref)
        if res.truncated:
            problems.append(f"{d.dialog_id}: truncated")
            continue
        if check_schedule(res.response, OVERFIT_SCHEDULE) is not None:
            problems.append(f"{d.dialog_id}: schedule violation")
        try:
            res.frames(spec)
        except ValueError as e:
            problems.append(f"{d.dialog_id}: grid not invertible ({e})")
    return hits / total, problems


def criterion_5(seed: int = 0):
    run = overfit_run(seed)
    below = next((k for k, v in enumerate(run.curve) if v < 0.1), None)
    acc, problems = response_accuracy(run.model, run.dialogs)
    ok = below is not None and acc >= 0.9 and not problems
    detail = (
        f"loss < 0.1 at step {below if below is not None else 'never'} of {len(run.curve)} "
        f"(final {run.curve[-1]:.4f}); token accuracy {acc:.1%}; layout problems {len(problems)}"
    )
    if problems:
        detail += f" e.g. {problems[0]}"
    return ok, detail


def criterion_6(seed: int = 0):
    from . import synthetic
    from .generation import generate

    run = overfit_run(seed)
    model, spec = run.model, run.model.cfg.vocab
    voices = {d.agent_ref: d.agent for d in run.dialogs}
    a, b = voices[0], voices[1]
    differ = 0
    for d in run.dialogs:
        pa = model.predict(synthetic.prompt_items(d, spec, inject=True, agent=a))
        pb = model.predict(synthetic.prompt_items(d, spec, inject=True, agent=b))
        # the agent slot is the final prompt position
        if int(np.argmax(pa[-1].head0)) != int(np.argmax(pb[-1].head0)):
            differ += 1
    identical = True
    for d in run.dialogs:
        base = synthetic.prompt_items(d, spec, inject=False)
        ia = model.inject_speaker(base, agent_vec=a, user_vec=d.user, enabled=False)
        ib = model.inject_speaker(base, agent_vec=b, user_vec=d.user, enabled=False)
        pa, pb = model.predict(ia), model.predict(ib)
        same = all(
            np.array_equal(x.head0, y.head0) and all(np.array_equal(u, v) for u, v in zip(x.heads, y.heads))
            for x, y in zip(pa, pb)
        )
        ga = generate(model, ia, OVERFIT_SCHEDULE)
        gb = generate(model, ib, OVERFIT_SCHEDULE)
        if not same or ga != gb:
            identical = False
            break
    ok = differ >= 1 and identical
    return ok, f"injection on: argmax differs on {differ}/{len(run.dialogs)} prompts; injection off: bit-identical={identical}"


# --------------------------------------------------------------------------
# 7: duplex protocol

_BAD = "violation"

# (state, event) -> (next mode, action kinds) or violation; written from the
# transition table independently of ``duplex.step``
EXPECTED_TABLE = {
    ("listening", "speech_start"): ("listening", []),
    ("listening", "speech_end_new"): ("awaiting_transcript", ["transcribe"]),
    ("listening", "speech_end_stale"): _BAD,
    ("listening", "transcript_current"): _BAD,
    ("listening", "transcript_cancelled"): ("listening", []),
    ("listening", "verdict_finished"): _BAD,
    ("listening", "verdict_cancelled"): ("listening", []),
    ("listening", "response_chunk"): _BAD,
    ("listening", "response_done"): _BAD,
    ("awaiting_transcript", "speech_start"): _BAD,
    ("awaiting_transcript", "speech_end_new"): _BAD,
    ("awaiting_transcript", "transcript_empty"): ("listening", []),
    ("awaiting_transcript", "transcript_current"): ("awaiting_verdict", ["detect_turn"]),
    ("awaiting_transcript", "transcript_other"): _BAD,
    ("awaiting_transcript", "verdict_finished"): _BAD,
    ("awaiting_transcript", "response_chunk"): _BAD,
    ("awaiting_transcript", "response_done"): _BAD,
    ("awaiting_verdict", "speech_start"): ("listening", ["cancel_verdict"]),
    ("awaiting_verdict", "speech_end_new"): _BAD,
    ("awaiting_verdict", "transcript_current"): _BAD,
    ("awaiting_verdict", "verdict_finished"): ("responding", ["start_generation"]),
    ("awaiting_verdict", "verdict_unfinished"): ("listening", []),
    ("awaiting_verdict", "verdict_bogus"): _BAD,
    ("awaiting_verdict", "verdict_other"): _BAD,
    ("awaiting_verdict", "response_chunk"): _BAD,
    ("awaiting_verdict", "response_done"): _BAD,
    ("responding", "speech_start"): ("listening", ["abort_generation", "commit_partial"]),
    ("responding", "speech_end_new"): _BAD,
    ("responding", "transcript_current"): _BAD,
    ("responding", "verdict_finished"): _BAD,
    ("responding", "response_chunk"): ("responding", ["emit"]),
    ("responding", "response_done"): ("listening", ["commit_turn"]),
}


def table_states() -> dict[str, duplex.DuplexState]:
    S = duplex.DuplexState
    return {
        "listening": S(duplex.LISTENING, None, 1, frozenset({0})),
        "awaiting_transcript": S(duplex.AWAITING_TRANSCRIPT, 1, 1),
        "awaiting_verdict": S(duplex.AWAITING_VERDICT, 1, 1, transcript="hi"),
        "responding": S(duplex.RESPONDING, 1, 1, transcript="hi", partial=("a",)),
    }


def table_events() -> dict[str, duplex.Event]:
    E = duplex.Event
    return {
        "speech_start": E("speech_start"),
        "speech_end_new": E("speech_end", 2),
        "speech_end_stale": E("speech_end", 1),
        "transcript_empty": E("transcript", 1, ""),
        "transcript_current": E("transcript", 1, "hi"),
        "transcript_cancelled": E("transcript", 0, "hi"),
        "transcript_other": E("transcript", 7, "hi"),
        "verdict_finished": E("verdict", 1, "finished"),
        "verdict_unfinished": E("verdict", 1, "unfinished"),
        "verdict_bogus": E("verdict", 1, "maybe"),
        "verdict_cancelled": E("verdict", 0, "finished"),
        "verdict_other": E("verdict", 7, "finished"),
        "response_chunk": E("response_chunk", 1, ("b",)),
        "response_done": E("response_done", 1),
    }


def check_duplex_table() -> list[str]:
    """Every (state, event) pair against the expected table; returns mismatches."""
    states, events = table_states(), table_events()
    problems = []
    for (state_name, event_name), want in EXPECTED_TABLE.items():
        try:
            nxt, actions = duplex.step(states[state_name], events[event_name])
            got = (nxt.mode, [a.kind for a in actions])
        except duplex.ProtocolViolation:
            got = _BAD
        if got != want:
            problems.append(f"({state_name}, {event_name}): got {got}, want {want}")
    # every event kind must be covered for every state
    for state_name in states:
        kinds = {events[e].kind for (s, e) in EXPECTED_TABLE if s == state_name}
        if kinds != set(duplex.EVENT_KINDS):
            problems.append(f"{state_name}: table misses {set(duplex.EVENT_KINDS) - kinds}")
    return problems


def criterion_7():
    problems = check_duplex_table()
    if problems:
        return False, f"transition table: {problems[0]}"
    aborts = None
    for name in GOLDEN_TRACES:
        trace = duplex.read_events((GOLDEN / f"{name}.trace.jsonl").read_text().splitlines())
        log, _ = duplex.run(trace)
        if duplex.format_log(log) != (GOLDEN / f"{name}.log.jsonl").read_text():
            return False, f"{name}: action log differs from golden"
        if name == "barge_in":
            aborts = sum(a.kind == "abort_generation" for a in log)
    if aborts != 1:
        return False, f"barge-in trace has {aborts} abort_generation actions"
    return True, f"{len(EXPECTED_TABLE)} table pairs; {len(GOLDEN_TRACES)} golden logs byte-identical; 1 abort in barge-in"


# --------------------------------------------------------------------------
# 8-9: metrics and packing

EDIT_MAX_LEN = 6
DTW_MAX_LEN = 8
DTW_TIME_LIMIT = 30.0
# rows of (pairs x paths x path length) gathered per oracle call
_DTW_CHUNK = 4_000_000


def dtw_sweep(max_len: int = DTW_MAX_LEN, time_limit: float | None = DTW_TIME_LIMIT):
    """Compare ``dtw_distance`` with path enumeration on every contour pair over {0,1,2}.

    Shorter lengths go first. Returns ``(mismatch, pairs_checked, pairs_total)``;
    the sweep stops early on a mismatch or once ``time_limit`` seconds pass.
    """
    start = time.perf_counter()
    contours = oracles.all_strings(3, max_len)
    shapes = sorted(((la, lb) for la in range(1, max_len + 1) for lb in range(1, max_len + 1)), key=lambda s: (max(s), s))
    total = sum(3 ** (la + lb) for la, lb in shapes)
    checked = 0
    for la, lb in shapes:
        A, B = contours[la].astype(float), contours[lb].astype(float)
        paths = oracles.monotone_paths(la, lb)
        step = max(1, _DTW_CHUNK // (paths.size or 1))
        rows_b = B.tolist()
        for i, a in enumerate(A.tolist()):
            for k0 in range(0, len(B), step):
                if time_limit is not None and time.perf_counter() - start > time_limit:
                    return None, checked, total
                ref = oracles.dtw_enumerate(A[i:i + 1], B[k0:k0 + step])[0]
                for k, b in enumerate(rows_b[k0:k0 + step]):
                    if abs(metrics.dtw_distance(a, b) - ref[k]) > 1e-12:
                        return f"dtw({a}, {b}) != {ref[k]}", checked, total
                    checked += 1
    return None, checked, total


def criterion_8(seed: int = 0, time_limit: float | None = DTW_TIME_LIMIT):
    start = time.perf_counter()
    strings = oracles.all_strings(3, EDIT_MAX_LEN)
    edit_pairs = 0
    for la, A in strings.items():
        for lb, B in strings.items():
            ref = oracles.edit_distance_batch(A, B)
            rows_a, rows_b = A.tolist(), B.tolist()
            for i, a in enumerate(rows_a):
                ref_i = ref[i]
                for k, b in enumerate(rows_b):
                    if metrics.edit_distance(a, b).distance != ref_i[k]:
                        return False, f"edit_distance({a}, {b}) != {ref_i[k]}"
            edit_pairs += len(rows_a) * len(rows_b)

    if metrics.dtw_distance([0, 1, 2], [0, 2]) != 1.0:
        return False, "dtw([0,1,2], [0,2]) != 1.0"
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(1000):
        dim = int(rng.integers(1, 17))
        a, b = rng.normal(size=dim), rng.normal(size=dim)
        lam = float(np.exp(rng.uniform(-5, 5)))
        worst = max(worst, abs(metrics.cosine_similarity(lam * a, b) - metrics.cosine_similarity(a, b)))
    if worst > 1e-12:
        return False, f"cosine scale invariance off by {worst:.2e}"

    remaining = None if time_limit is None else max(0.0, time_limit - (time.perf_counter() - start))
    mismatch, checked, total = dtw_sweep(DTW_MAX_LEN, remaining)
    if mismatch is not None:
        return False, mismatch
    summary = f"edit distance exhaustive over {edit_pairs} pairs; cosine drift {worst:.1e}; "
    if checked < total:
        return False, summary + f"DTW enumeration covered {checked} of {total} pairs (len <= {DTW_MAX_LEN}) before the time limit"
    return True, summary + f"DTW exhaustive over {total} pairs (len <= {DTW_MAX_LEN})"


def criterion_9(cases: int = 1000, seed: int = 0):
    rng = random.Random(seed)
    for case in range(cases):
        capacity = rng.randint(1, 10_000)
        lengths = [rng.randint(0, capacity) for _ in range(rng.randint(0, 60))]
        packs = pack_sequences(lengths, capacity)
        placed = [s.record for p in packs for s in p.segments]
        if placed != list(range(len(lengths))):
            return False, f"case {case}: records not placed exactly once in order"
        if sum(p.fill for p in packs) != sum(lengths):
            return False, f"case {case}: fill does not conserve length"
        if any(p.fill > capacity for p in packs):
            return False, f"case {case}: pack over capacity"
        if [p.to_record() for p in pack_sequences(lengths, capacity)] != [p.to_record() for p in packs]:
            return False, f"case {case}: packing not deterministic"
    fixture = pack_sequences([4000, 3000, 5000], 10_000)
    shape = [[s.end - s.start for s in p.segments] for p in fixture]
    if shape != [[4000, 3000], [5000]]:
        return False, f"fixture packed as {shape}"
    return True, f"{cases} random lists conserve records and fill within capacity; fixture -> {shape}"


# --------------------------------------------------------------------------
# 10: CLI determinism


def _cli(*args: str) -> subprocess.CompletedProcess:
    return subprocess.run([sys.executable, "-m", "hybrid_slm", *args], capture_output=True, text=True)


def cli_pipeline(workdir: Path, seed: int = 0, steps: int = 60) -> bytes:
    """synth -> train-toy -> generate through the CLI; returns the generation records."""
    workdir.mkdir(parents=True, exist_ok=True)
    cfg, corpus, speakers = workdir / "model.cfg", workdir / "dialogs.jsonl", workdir / "speakers.jsonl"
    ckpt, out = workdir / "toy.ckpt", workdir / "generated.jsonl"
    steps_ = [
        ("init-config", "--out", str(cfg), "--d-model", "32", "--seed", str(seed)),
        ("synth", "--config", str(cfg), "--count", "8", "--corpus", str(corpus), "--speakers", str(speakers), "--seed", str(seed)),
        ("train-toy", "--config", str(cfg), "--corpus", str(corpus), "--speakers", str(speakers), "--out", str(ckpt),
         "--curve", str(workdir / "curve.tsv"), "--steps", str(steps), "--n", "2", "--m", "6", "--seed", str(seed)),
        ("generate", "--checkpoint", str(ckpt), "--prompt", str(corpus), "--speakers", str(speakers),
         "--output", str(out), "--seed", str(seed)),
    ]
    for cmd in steps_:
        proc = _cli(*cmd)
        if proc.returncode != 0:
            raise RuntimeError(f"{cmd[0]} exited {proc.returncode}: {proc.stderr.strip()}")
    return out.read_bytes()


def criterion_10(workdir: str | None = None, seed: int = 0):
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        first = cli_pipeline(Path(tmp) / "run1", seed)
        second = cli_pipeline(Path(tmp) / "run2", seed)
        ckpt_same = (Path(tmp) / "run1" / "toy.ckpt").read_bytes() == (Path(tmp) / "run2" / "toy.ckpt").read_bytes()
    lines = first.decode().count("\n")
    return first == second and lines > 0, f"{lines} generation records byte-identical={first == second}; checkpoints identical={ckpt_same}"


# --------------------------------------------------------------------------

CRITERIA = {
    1: ("interleave roundtrip", criterion_1, 5.0),
    2: ("delay roundtrip", criterion_2, 5.0),
    3: ("loss oracle", criterion_3, 10.0),
    4: ("gradient check", criterion_4, 120.0),
    5: ("overfit smoke test", criterion_5, 600.0),
    6: ("speaker-injection ablation", criterion_6, None),
    7: ("duplex protocol", criterion_7, None),
    8: ("metric oracles", criterion_8, 30.0),
    9: ("packing", criterion_9, None),
    10: ("CLI determinism", criterion_10, None),
}


def run_criterion(number: int, **kwargs) -> Result:
    name, fn, budget = CRITERIA[number]
    start = time.perf_counter()
    try:
        passed, detail = fn(**kwargs)
    except Exception as e:  # a crash is a failure, reported on its line
        passed, detail = False, f"raised {type(e).__name__}: {e}"
    seconds = time.perf_counter() - start
    if number == 5 and passed:
        # the budget covers training plus generation, which may be cached
        seconds = max(seconds, overfit_run().seconds)
    if budget is not None and seconds >= budget:
        passed, detail = False, f"{detail}; exceeded {budget:g} s"
    return Result(number, name, passed, detail, seconds, budget)


def run_all(only=None, workdir: str | None = None) -> list[Result]:
    results = []
    for number in sorted(CRITERIA):
        if only and number not in only:
            continue
        kwargs = {"workdir": workdir} if number == 10 else {}
        results.append(run_criterion(number, **kwargs))
    return results
