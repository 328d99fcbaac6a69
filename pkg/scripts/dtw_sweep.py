"""Check dtw_distance against path enumeration on every contour pair over {0,1,2}.

Without --time-limit the sweep runs to completion; at length 8 that takes hours.
"""

import argparse
import time

from hybrid_slm.acceptance import dtw_sweep


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--max-len", type=int, default=8)
    p.add_argument("--time-limit", type=float, default=None, help="seconds")
    args = p.parse_args()
    start = time.perf_counter()
    mismatch, checked, total = dtw_sweep(args.max_len, args.time_limit)
    print(f"max_len\t{args.max_len}\tchecked\t{checked}\ttotal\t{total}\tseconds\t{time.perf_counter() - start:.1f}")
    if mismatch:
        print(f"mismatch\t{mismatch}")
    raise SystemExit(0 if mismatch is None and checked == total else 1)


if __name__ == "__main__":
    main()
