"""Void fiber: Classical stalls, RPM-Classical converges.

    python scripts/void_cell.py --n 128
"""
import argparse

from _common import run
from rpmfft.greens import reference_from_average
from rpmfft.microstructure import Grid2, single_fiber
from rpmfft.spectral_core import CellProblem, LoadCase

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=128)
    ap.add_argument("--cap", type=int, default=10_000)
    args = ap.parse_args()
    mat = single_fiber(Grid2(args.n, args.n), 1 / 32, (0.0, 0.25), (1.0, 0.25))
    p = CellProblem(mat, reference_from_average(0.0, 1.0, 0.25), LoadCase.of(e12=0.005))
    for rpm in (False, True):
        rep = run(p, "classical", rpm=rpm, max_it=args.cap)
        print(f"{'rpm-' if rpm else ''}classical iterations={rep.iterations} converged={rep.converged} "
              f"residual={rep.final_residual:.3e} basis={rep.basis_size}")
