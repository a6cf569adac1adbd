"""Iteration count against contrast K, with log-log slopes.

    python scripts/contrast_scaling.py --n 256
"""
import argparse

from _common import fiber_problem, run
from rpmfft.cli import loglog_slope

CASES = [
    ("classical", "average", [10, 100, 1000]),
    ("accelerated", "average", [100, 1000]),
    ("accelerated", "geometric", [1e2, 1e3, 1e4, 1e5]),
]

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=256)
    ap.add_argument("--rpm", action="store_true", help="also run the RPM-wrapped schemes")
    args = ap.parse_args()
    for scheme, ref, Ks in CASES:
        for rpm in [False, True] if args.rpm else [False]:
            its = []
            for K in Ks:
                rep = run(fiber_problem(args.n, K, ref), scheme, rpm=rpm)
                its.append(rep.iterations)
                print(f"{'rpm-' if rpm else ''}{scheme:12s} {ref:9s} K={K:<8g} iterations={rep.iterations:6d} "
                      f"converged={rep.converged} basis={rep.basis_size}", flush=True)
            print(f"  slope {loglog_slope(Ks, its):.3f}")
