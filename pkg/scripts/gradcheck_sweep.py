"""Worst relative gradient error of the tiny float64 model across step sizes."""

import argparse

import torch

from hybrid_slm import acceptance, synthetic
from hybrid_slm.model import HybridLM, ModelConfig, grad_check


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--epsilons", default="1e-3,1e-4,1e-5,1e-6")
    p.add_argument("--coords", type=int, default=256)
    p.add_argument("--seeds", type=int, default=3)
    args = p.parse_args()
    torch.set_num_threads(1)
    print("epsilon\tseed\tmax_relative_error")
    for eps in (float(e) for e in args.epsilons.split(",")):
        for seed in range(args.seeds):
            cfg = ModelConfig(acceptance.OVERFIT_VOCAB, layers=2, d_model=32, attn_heads=4, max_seq=96, seed=seed)
            dialogs = synthetic.make_dialogs(cfg.vocab, count=4, speaker_dim=cfg.speaker_dim, seed=seed)
            examples = synthetic.to_examples(dialogs, cfg.vocab, acceptance.OVERFIT_SCHEDULE)
            err = grad_check(HybridLM(cfg), examples, epsilon=eps, n_coords=args.coords, seed=seed)
            print(f"{eps:g}\t{seed}\t{err:.3e}")


if __name__ == "__main__":
    main()
