"""RPM-Accelerated advantage over plain Accelerated as the grid is refined.

Uses the geometric-mean reference and the canonical fiber (radius 1/32 of the
edge), so the physical problem is fixed while the resolution changes.

    python scripts/mesh_dependence.py --sizes 64 128 256
"""
import argparse

from _common import fiber_problem, run

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256])
    ap.add_argument("--K", type=float, nargs="+", default=[1e4, 5e4])
    args = ap.parse_args()
    for n in args.sizes:
        for K in args.K:
            p = fiber_problem(n, K, "geometric")
            plain = run(p, "accelerated")
            wrapped = run(p, "accelerated", rpm=True)
            print(f"n={n:4d} K={K:<8g} accelerated={plain.iterations:6d} rpm-accelerated={wrapped.iterations:5d} "
                  f"basis={wrapped.basis_size:4d} ratio={plain.iterations / wrapped.iterations:6.2f}", flush=True)
