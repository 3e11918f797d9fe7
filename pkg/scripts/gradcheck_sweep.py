"""How often does the tiny-instance gradient check pass across many seeds?

    python scripts/gradcheck_sweep.py --seeds 100
"""

import argparse

from icsfusion.gradcheck import TOLERANCE, check, make_instance
from icsfusion.model import MODES


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=100)
    args = ap.parse_args()
    for mode in MODES:
        worst = []
        for seed in range(args.seeds):
            errs = check(make_instance(seed, mode))
            name = max(errs, key=errs.get)
            worst.append((errs[name], seed, name))
        passed = sum(e <= TOLERANCE for e, _, _ in worst)
        e, seed, name = max(worst)
        print(f"{mode:14s} {passed}/{args.seeds} pass; worst {e:.2e} (seed {seed}, {name})")


if __name__ == "__main__":
    main()
