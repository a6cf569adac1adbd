"""Iteration count against the reference modulus at K = 1e4.

E_o is swept over two decades around the arithmetic mean of the phase moduli.

    python scripts/reference_robustness.py --n 256 --n-max 10
"""
import argparse

from _common import fiber_problem, run

FACTORS = [0.1, 0.316, 1.0, 3.16, 10.0]

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=256)
    ap.add_argument("--K", type=float, default=1e4)
    ap.add_argument("--n-max", type=int, default=10)
    ap.add_argument("--cap", type=int, default=10_000)
    args = ap.parse_args()
    for rpm in (True, False):
        its = []
        for f in FACTORS:
            rep = run(fiber_problem(args.n, args.K, factor=f), "accelerated", rpm=rpm, max_it=args.cap, n_max=args.n_max)
            its.append(rep.iterations)
            print(f"{'rpm-' if rpm else ''}accelerated factor={f:<6g} iterations={rep.iterations:6d} "
                  f"converged={rep.converged} basis={rep.basis_size}", flush=True)
        print(f"  max/min {max(its) / min(its):.2f}")
