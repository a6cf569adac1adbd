"""Shared setup for the experiment scripts: the canonical stiff-fiber cell."""
import numpy as np

from rpmfft.greens import ReferenceMedium, reference_from_average
from rpmfft.microstructure import Grid2, single_fiber
from rpmfft.rpm import RPMConfig, rpm_solve_scheme
from rpmfft.spectral_core import CellProblem, FixedPointConfig, LoadCase, make_scheme, solve_fixed_point

SHEAR = LoadCase.of(e12=0.005)


def fiber_problem(n, K, reference="average", factor=1.0, radius=1 / 32, nu=0.25):
    mat = single_fiber(Grid2(n, n), radius, (K, nu), (1.0, nu))
    if reference == "geometric":
        medium = ReferenceMedium.from_young(np.sqrt(K) * factor, nu)
    else:
        medium = reference_from_average(K, 1.0, nu).scaled(factor)
    return CellProblem(mat, medium, SHEAR)


def run(problem, scheme, rpm=False, tol=1e-4, max_it=20_000, n_max=10):
    sch = make_scheme(problem, scheme)
    with np.errstate(over="ignore", invalid="ignore"):
        if rpm:
            _, rep = rpm_solve_scheme(sch, RPMConfig(tolerance=tol, max_outer=max_it, n_max=n_max))
        else:
            _, rep = solve_fixed_point(sch, FixedPointConfig(tolerance=tol, max_iterations=max_it))
    return rep
