"""Overfit the toy model on the synthetic dialogs and report memorization.

    python scripts/overfit.py --steps 2000 --lr 0.3 --curve curve.tsv
"""

import argparse
import time

import torch

from hybrid_slm import acceptance, synthetic
from hybrid_slm.model import HybridLM, ModelConfig, StageConfig, train


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=0.3)
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="sgd")
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    p.add_argument("--dialogs", type=int, default=32)
    p.add_argument("--no-speaker", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--curve", help="write the loss curve here")
    args = p.parse_args()

    torch.set_num_threads(1)
    cfg = ModelConfig(acceptance.OVERFIT_VOCAB, layers=2, d_model=args.d_model, attn_heads=4, max_seq=96,
                      seed=args.seed, dtype=args.dtype)
    inject = not args.no_speaker
    dialogs = synthetic.make_dialogs(cfg.vocab, count=args.dialogs, speaker_dim=cfg.speaker_dim, seed=args.seed)
    examples = synthetic.to_examples(dialogs, cfg.vocab, acceptance.OVERFIT_SCHEDULE, inject=inject)
    model = HybridLM(cfg)
    stage = StageConfig("all", lr=args.lr, steps=args.steps, batch_size=len(examples), optimizer=args.optimizer)
    start = time.perf_counter()
    curve = train(model, examples, stage, seed=args.seed)
    elapsed = time.perf_counter() - start
    below = next((k for k, v in enumerate(curve) if v < 0.1), None)
    acc, problems = acceptance.response_accuracy(model, dialogs, inject=inject)
    print(f"steps\t{len(curve)}\ttrain_seconds\t{elapsed:.1f}")
    print(f"first_step_below_0.1\t{below}\tfinal_loss\t{curve[-1]:.6f}")
    print(f"token_accuracy\t{acc:.4f}\tlayout_problems\t{len(problems)}")
    if args.curve:
        with open(args.curve, "w") as f:
            f.write("step\tloss\n")
            for k, v in enumerate(curve):
                f.write(f"{k}\t{v:.8g}\n")


if __name__ == "__main__":
    main()
