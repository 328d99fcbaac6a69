"""Command-line entry point.

Exit codes: 0 on success, 1 on usage or validation errors, 2 on I/O errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import corpus_io, duplex, metrics
from .delay_pattern import DelayError, DelayGrid, apply_delay, invert_delay
from .dialog_state import DialogError, assemble_context, dialogs_from_records, turn_to_record
from .hybrid_loss import LossError, PositionPrediction, hybrid_nll, mean_per_token
from .interleaver import InterleaveConfig, layout_string
from .kvfile import ConfigError
from .token_space import VocabError, VocabSpec

log = logging.getLogger("hybrid_slm")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _out(path):
    return open(path, "w") if path and path != "-" else sys.stdout


def _emit(lines, path):
    f = _out(path)
    try:
        for line in lines:
            f.write(line + "\n")
    finally:
        if f is not sys.stdout:
            f.close()


def _load_vocab(args) -> VocabSpec:
    return VocabSpec.load(args.config) if args.config else VocabSpec()


def _set_determinism(seed: int) -> None:
    import torch

    torch.set_num_threads(1)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


# --------------------------------------------------------------------------
# subcommands


def cmd_interleave(args):
    cfg = InterleaveConfig(args.n, args.m)
    recs = corpus_io.read_records(args.input, required=("text", "frames"))
    out = []
    for rec in recs:
        hybrid = corpus_io.hybrid_record(rec["text"], rec["frames"], cfg)
        # keep the input's field order so deinterleave can restore it exactly
        merged = {k: hybrid.get(k, v) for k, v in rec.items()}
        merged.update({k: hybrid[k] for k in ("schedule", "layout")})
        out.append(corpus_io.dumps(merged))
    _emit(out, args.output)


def cmd_deinterleave(args):
    out = []
    for line, rec in enumerate(corpus_io.read_records(args.input, required=("text", "frames", "schedule")), 1):
        seq, cfg = corpus_io.record_to_hybrid(rec, line)
        corpus_io.validate_hybrid(seq, cfg)
        pair = corpus_io.hybrid_to_pair(seq)
        out.append(corpus_io.dumps({k: pair.get(k, v) for k, v in rec.items() if k not in ("schedule", "layout")}))
    _emit(out, args.output)


def _pads(args, J):
    if args.pad is not None:
        return (args.pad,) * J
    spec = _load_vocab(args)
    if spec.num_codebooks != J:
        raise VocabError(f"records have J={J} codebooks but the vocab config has {spec.num_codebooks}")
    return spec.pad_audio_id


def cmd_delay(args):
    out = []
    for rec in corpus_io.read_records(args.input, required=("frames",)):
        frames = rec["frames"]
        J = len(frames[0]) if frames else args.codebooks
        if J is None and args.config:
            J = _load_vocab(args).num_codebooks
        if J is None:
            raise VocabError("cannot infer J from an empty record; pass --codebooks or --config")
        grid = apply_delay(frames, J, _pads(args, J))
        out.append(corpus_io.dumps({(k if k != "frames" else "grid"): (v if k != "frames" else [list(r) for r in grid.rows]) for k, v in rec.items()}))
    _emit(out, args.output)


def cmd_undelay(args):
    out = []
    for rec in corpus_io.read_records(args.input, required=("grid",)):
        rows = rec["grid"]
        grid = DelayGrid(tuple(tuple(r) for r in rows), _pads(args, len(rows)))
        frames = invert_delay(grid)
        out.append(corpus_io.dumps({(k if k != "grid" else "frames"): (v if k != "grid" else [list(f) for f in frames]) for k, v in rec.items()}))
    _emit(out, args.output)


def cmd_loss(args):
    spec = _load_vocab(args)
    recs = corpus_io.read_records(args.records, required=("text", "frames", "schedule"))
    preds = corpus_io.read_records(args.predictions, required=("head0",))
    if len(recs) != len(preds):
        raise LossError(f"{len(recs)} records but {len(preds)} prediction dumps")
    grand, scored = 0.0, 0
    for line, (rec, pred) in enumerate(zip(recs, preds), 1):
        seq, _ = corpus_io.record_to_hybrid(rec, line)
        mask = rec.get("mask", [1] * len(seq))
        heads = pred.get("heads", [])
        positions = [
            PositionPrediction(np.asarray(pred["head0"][t]), tuple(np.asarray(h[t]) for h in heads))
            for t in range(len(pred["head0"]))
        ]
        total, _ = hybrid_nll(positions, seq, mask, spec)
        grand += total
        scored += sum(bool(m) for m in mask)
    lines = ["metric\tvalue\tcount", f"hybrid_nll_total\t{grand:.10g}\t{scored}",
             f"hybrid_nll_mean\t{mean_per_token(grand, [1] * scored):.10g}\t{scored}"]
    _emit(lines, args.output)


def cmd_pack(args):
    recs = corpus_io.read_records(args.input)
    items = []
    for i, rec in enumerate(recs):
        if args.length_field in rec:
            length = int(rec[args.length_field])
        else:
            length = len(rec.get("text", [])) + len(rec.get("frames", []))
        items.append((rec.get("id", i), length))
    packs = corpus_io.pack_sequences(items, args.capacity)
    _emit([corpus_io.dumps(p.to_record()) for p in packs], args.output)


def _read_speakers(path):
    if not path:
        return {}
    return {rec["id"]: np.asarray(rec["vector"], dtype=np.float64) for rec in corpus_io.read_records(path, required=("id", "vector"))}


def _model_config(args):
    from .model import ModelConfig

    cfg = ModelConfig.load(args.config) if args.config else ModelConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _prompt(dialog, spec, speakers, inject):
    agent = speakers.get(dialog.response.speaker_ref) if dialog.response is not None else None
    user = speakers.get(dialog.query.speaker_ref)
    return assemble_context(dialog.history, dialog.query, spec, agent_emb=agent, user_emb=user, inject=inject).items


def cmd_train_toy(args):
    from .checkpoint import save_checkpoint
    from .model import Example, HybridLM, StageConfig, train
    from .responses import build_response

    seed = args.seed if args.seed is not None else 0
    _set_determinism(seed)
    cfg = _model_config(args)
    spec = cfg.vocab
    icfg = InterleaveConfig(args.n, args.m)
    speakers = _read_speakers(args.speakers)
    dialogs = dialogs_from_records(corpus_io.read_records(args.corpus, required=("role", "text")))
    examples = []
    for d in dialogs:
        if d.response is None:
            raise DialogError(f"dialog {d.dialog!r} has no assistant response to train on")
        prompt = _prompt(d, spec, speakers, inject=not args.no_speaker)
        examples.append(Example(prompt + build_response(d.response.text, d.response.audio or (), icfg, spec)))
    packs = None
    if args.pack_capacity:
        packed = corpus_io.pack_sequences([(i, len(e.items) - 1) for i, e in enumerate(examples)], args.pack_capacity)
        packs = [[s.record for s in p.segments] for p in packed]
    stage = StageConfig(trainable=args.trainable, lr=args.lr, steps=args.steps, batch_size=args.batch_size, optimizer=args.optimizer)
    model = HybridLM(cfg)
    curve = train(model, examples, stage, seed=seed, packs=packs)
    save_checkpoint(model, args.out, extra={"schedule": [args.n, args.m], "inject": not args.no_speaker})
    if args.curve:
        _emit(["step\tloss"] + [f"{i}\t{v:.10g}" for i, v in enumerate(curve)], args.curve)
    log.info("trained %d steps, final loss %.6g", len(curve), curve[-1] if curve else float("nan"))
    print(f"final_loss\t{curve[-1] if curve else float('nan'):.10g}")


def cmd_generate(args):
    from .checkpoint import load_checkpoint, read_header
    from .generation import generate

    seed = args.seed if args.seed is not None else 0
    _set_determinism(seed)
    header, _ = read_header(args.checkpoint)
    model = load_checkpoint(args.checkpoint)
    spec = model.cfg.vocab
    n, m = header.get("extra", {}).get("schedule", [args.n, args.m])
    if args.n is not None:
        n = args.n
    if args.m is not None:
        m = args.m
    icfg = InterleaveConfig(n, m)
    inject = header.get("extra", {}).get("inject", True) and not args.no_speaker
    speakers = _read_speakers(args.speakers)
    dialogs = dialogs_from_records(corpus_io.read_records(args.prompt, required=("role", "text")))
    out = []
    for d in dialogs:
        prompt = _prompt(d, spec, speakers, inject=inject)
        res = generate(model, prompt, icfg, decode=args.decode, temperature=args.temperature, max_items=args.max_items, seed=seed)
        text, columns = res.text(), [list(c) for c in corpus_io.deinterleave(res.response)[1]]
        rec = {"dialog": d.dialog, "text": text, "frames": columns, "schedule": [n, m],
               "layout": layout_string(res.response), "truncated": res.truncated}
        if not res.truncated:
            rec["audio_frames"] = [list(f) for f in res.frames(spec)]
        out.append(corpus_io.dumps(rec))
    _emit(out, args.output)


def cmd_gradcheck(args):
    from .model import HybridLM, ModelConfig
    from . import synthetic

    seed = args.seed if args.seed is not None else 0
    _set_determinism(seed)
    cfg = _model_config(args) if args.config else ModelConfig(
        vocab=VocabSpec(text_size=64, codebook_sizes=(32,) * 4), layers=2, d_model=32, attn_heads=4, seed=seed
    )
    cfg = replace(cfg, dtype="float64")
    model = HybridLM(cfg)
    dialogs = synthetic.make_dialogs(cfg.vocab, count=args.dialogs, speaker_dim=cfg.speaker_dim, seed=seed)
    examples = synthetic.to_examples(dialogs, cfg.vocab, InterleaveConfig(args.n, args.m))
    from .model import grad_check

    err = grad_check(model, examples, epsilon=args.epsilon, n_coords=args.coords, seed=seed)
    print(f"max_relative_error\t{err:.6e}\t{args.coords}")
    return EXIT_OK if err < args.tolerance else EXIT_INVALID


def cmd_duplex_sim(args):
    with open(args.trace) as f:
        trace = duplex.read_events(f)
    suite = None
    if args.suite:
        suite = duplex.DetectorSuite.from_record(json.loads(Path(args.suite).read_text()))
    actions, _ = duplex.run(trace, suite)
    f = _out(args.output)
    try:
        f.write(duplex.format_log(actions))
    finally:
        if f is not sys.stdout:
            f.close()


def cmd_metrics(args):
    recs = corpus_io.read_records(args.input, required=("metric", "ref", "hyp"))
    sums: dict[str, list[float]] = {}
    for line, rec in enumerate(recs, 1):
        kind, ref, hyp = rec["metric"], rec["ref"], rec["hyp"]
        if kind == "wer":
            vals = {"wer": metrics.wer(ref, hyp)}
        elif kind == "cer":
            vals = {"cer": metrics.cer(ref, hyp)}
        elif kind == "speaker_similarity":
            vals = {"speaker_similarity": metrics.cosine_similarity(ref, hyp)}
        elif kind == "contour":
            a = metrics.normalize_contour(ref, rec.get("ref_voiced"))
            b = metrics.normalize_contour(hyp, rec.get("hyp_voiced"))
            vals = {"contour_mse": metrics.contour_mse(a, b), "contour_dtw": metrics.dtw_distance(a, b, normalize=args.dtw_normalize)}
        else:
            raise corpus_io.RecordError(f"unknown metric {kind!r}", line)
        for k, v in vals.items():
            sums.setdefault(k, []).append(v)
    lines = ["metric\tvalue\tcount"] + [f"{k}\t{np.mean(v):.10g}\t{len(v)}" for k, v in sums.items()]
    _emit(lines, args.output)


def cmd_synth(args):
    from .model import ModelConfig
    from . import synthetic

    cfg = ModelConfig.load(args.config) if args.config else ModelConfig()
    seed = args.seed if args.seed is not None else 0
    dialogs = synthetic.make_dialogs(cfg.vocab, count=args.count, voices=args.voices, speaker_dim=cfg.speaker_dim, seed=seed)
    lines, speakers = [], {}
    for d in dialogs:
        for turn in d.history:
            lines.append(corpus_io.dumps(turn_to_record(turn, dialog=d.dialog_id)))
        lines.append(corpus_io.dumps(turn_to_record(d.query, dialog=d.dialog_id)))
        lines.append(corpus_io.dumps(turn_to_record(d.response_turn, dialog=d.dialog_id)))
        speakers[d.query.speaker_ref] = d.user
        speakers[d.response_turn.speaker_ref] = d.agent
    _emit(lines, args.corpus)
    _emit([corpus_io.dumps({"id": k, "vector": [float(x) for x in v]}) for k, v in speakers.items()], args.speakers)


def cmd_init_config(args):
    from .model import ModelConfig

    vocab = VocabSpec(text_size=args.text_size, codebook_sizes=(args.codebook_size,) * args.codebooks, audio_eos=args.audio_eos)
    cfg = ModelConfig(vocab=vocab, layers=args.layers, d_model=args.d_model, attn_heads=args.attn_heads,
                      max_seq=args.max_seq, seed=args.seed or 0, dtype=args.dtype)
    cfg.save(args.out)


def cmd_acceptance(args):
    from . import acceptance

    only = {int(x) for x in args.only.split(",")} if args.only else None
    results = acceptance.run_all(only=only, workdir=args.workdir)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_INVALID


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hybrid-slm", description="Hybrid interleaved text/multi-codebook speech sequence toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    def add(name, fn, help):
        sp = sub.add_parser(name, help=help, description=help)
        sp.set_defaults(fn=fn)
        sp.add_argument("--seed", type=int, default=None, help="seed for every stochastic step (default 0)")
        return sp

    def schedule(sp, required=True, default=(None, None)):
        sp.add_argument("--n", type=int, required=required, default=default[0], help="text block size")
        sp.add_argument("--m", type=int, required=required, default=default[1], help="audio block size")

    sp = add("interleave", cmd_interleave, "Interleave text/frames records into hybrid records.")
    sp.add_argument("--input", required=True, help="records with 'text' and 'frames'")
    sp.add_argument("--output", default="-")
    schedule(sp)

    sp = add("deinterleave", cmd_deinterleave, "Split hybrid records back into text/frames records.")
    sp.add_argument("--input", required=True)
    sp.add_argument("--output", default="-")

    for name, fn, what in (("delay", cmd_delay, "Replace 'frames' with the delayed 'grid' (J rows)."),
                           ("undelay", cmd_undelay, "Replace a delayed 'grid' with the original 'frames'.")):
        sp = add(name, fn, what)
        sp.add_argument("--input", required=True)
        sp.add_argument("--output", default="-")
        sp.add_argument("--config", help="vocab/model key-value config supplying pad ids")
        sp.add_argument("--pad", type=int, help="one pad id for every codebook (overrides --config)")
        sp.add_argument("--codebooks", type=int, help="J for records with no frames")

    sp = add("loss", cmd_loss, "Score hybrid records against prediction dumps; prints a metric report.")
    sp.add_argument("--records", required=True)
    sp.add_argument("--predictions", required=True, help="one line per record: 'head0' [L][|V|+|U0|], 'heads' [J-1][L][|Uj|]")
    sp.add_argument("--config", help="vocab config (default: built-in VocabSpec)")
    sp.add_argument("--output", default="-")

    sp = add("pack", cmd_pack, "Greedy in-order packing into fixed-capacity sequences; writes a manifest.")
    sp.add_argument("--input", required=True)
    sp.add_argument("--capacity", type=int, default=10_000)
    sp.add_argument("--length-field", default="length", help="record field holding the token count")
    sp.add_argument("--output", default="-")

    sp = add("train-toy", cmd_train_toy, "Train the toy model on a dialog corpus; writes a checkpoint.")
    sp.add_argument("--config", help="model key-value config")
    sp.add_argument("--corpus", required=True, help="dialog turn records grouped by 'dialog'")
    sp.add_argument("--speakers", help="speaker vectors: records with 'id' and 'vector'")
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.add_argument("--curve", help="loss curve output (step, loss)")
    sp.add_argument("--steps", type=int, default=2000)
    sp.add_argument("--lr", type=float, default=0.3)
    sp.add_argument("--optimizer", choices=("sgd", "adam"), default="sgd")
    sp.add_argument("--batch-size", type=int, default=32)
    sp.add_argument("--trainable", choices=("adapter-only", "adapter+backbone", "all"), default="all")
    sp.add_argument("--pack-capacity", type=int, default=0, help="pack examples into rows of this many positions")
    sp.add_argument("--no-speaker", action="store_true", help="disable speaker injection")
    schedule(sp, required=False, default=(4, 12))

    sp = add("generate", cmd_generate, "Generate hybrid responses for each prompt dialog.")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--prompt", required=True, help="dialog turn records; a trailing assistant turn only names the voice")
    sp.add_argument("--speakers")
    sp.add_argument("--decode", choices=("greedy", "temperature"), default="greedy")
    sp.add_argument("--temperature", type=float, default=1.0)
    sp.add_argument("--max-items", type=int, default=256)
    sp.add_argument("--no-speaker", action="store_true")
    sp.add_argument("--output", default="-")
    schedule(sp, required=False)

    sp = add("gradcheck", cmd_gradcheck, "Compare analytic and central-difference gradients of the hybrid loss.")
    sp.add_argument("--config", help="model config (default: 2 layers, d_model 32, J 4)")
    sp.add_argument("--epsilon", type=float, default=1e-4)
    sp.add_argument("--coords", type=int, default=256)
    sp.add_argument("--dialogs", type=int, default=4)
    sp.add_argument("--tolerance", type=float, default=1e-4)
    schedule(sp, required=False, default=(2, 6))

    sp = add("duplex-sim", cmd_duplex_sim, "Run a duplex event trace; writes the action log.")
    sp.add_argument("--trace", required=True)
    sp.add_argument("--suite", help="JSON detector tables (transcripts, verdicts, responses, suppress); without it the trace is fully scripted")
    sp.add_argument("--output", default="-")

    sp = add("metrics", cmd_metrics, "Compute WER/CER, speaker similarity and contour MSE/DTW over paired records.")
    sp.add_argument("--input", required=True, help="records with 'metric', 'ref', 'hyp'")
    sp.add_argument("--dtw-normalize", action="store_true", help="divide DTW cost by the optimal path length")
    sp.add_argument("--output", default="-")

    sp = add("synth", cmd_synth, "Write a synthetic dialog corpus and its speaker vectors.")
    sp.add_argument("--config", help="model config (vocab sizes, speaker_dim)")
    sp.add_argument("--count", type=int, default=32)
    sp.add_argument("--voices", type=int, default=2)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--speakers", required=True)

    sp = add("init-config", cmd_init_config, "Write a model key-value config.")
    sp.add_argument("--out", required=True)
    sp.add_argument("--text-size", type=int, default=64)
    sp.add_argument("--codebooks", type=int, default=4)
    sp.add_argument("--codebook-size", type=int, default=32)
    sp.add_argument("--audio-eos", choices=("token", "implicit"), default="token")
    sp.add_argument("--layers", type=int, default=2)
    sp.add_argument("--d-model", type=int, default=64)
    sp.add_argument("--attn-heads", type=int, default=4)
    sp.add_argument("--max-seq", type=int, default=96)
    sp.add_argument("--dtype", choices=("float32", "float64"), default="float32")

    sp = add("acceptance", cmd_acceptance, "Run the acceptance criteria; one pass/fail line each.")
    sp.add_argument("--only", help="comma-separated criterion numbers")
    sp.add_argument("--workdir", help="scratch directory for file-based criteria")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as e:  # --help
        return EXIT_OK if e.code in (0, None) else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        code = args.fn(args)
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, ConfigError, VocabError, DelayError, LossError, DialogError, duplex.ProtocolViolation, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
