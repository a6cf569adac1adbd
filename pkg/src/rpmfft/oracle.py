"""Reference solutions for validation.

``dense_solve`` assembles the discrete Lippmann-Schwinger operator
``I + Gamma d`` as a dense matrix by probing it with unit fields, and solves
it directly. It uses the same Green operator table as the iterative schemes,
so agreement checks the iterations, not the discretisation.

``laminate_effective`` is the closed-form plane-strain stiffness of a
two-phase laminate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .greens import GreenOperator
from .spectral_core import fft2, ifft2
from .tensor2d import apply_voigt, lame_parameters

MAX_DENSE_CELLS = 24 * 24


class SingularSystemError(np.linalg.LinAlgError):
    def __init__(self, msg, nullity):
        super().__init__(msg)
        self.nullity = nullity


@dataclass
class DenseSystem:
    """``matrix @ eps.ravel() = rhs`` with ``matrix = I + Gamma d``."""

    matrix: np.ndarray
    rhs: np.ndarray
    shape: tuple

    @property
    def n(self):
        return len(self.rhs)


def assemble(material, medium, load, batch=256):
    grid = material.grid
    if grid.size > MAX_DENSE_CELLS:
        raise ValueError(f"dense assembly is limited to {MAX_DENSE_CELLS} cells, got {grid.size}")
    green = GreenOperator(medium, grid)
    d = material.stiffness_field() - medium.stiffness[:, :, None, None]
    shape = (3,) + grid.shape
    N = 3 * grid.size
    A = np.empty((N, N))
    for start in range(0, N, batch):
        cols = np.arange(start, min(start + batch, N))
        # probes laid out as (3, B, ny, nx) so the Green table broadcasts
        probe = np.zeros((N, len(cols)))
        probe[cols, np.arange(len(cols))] = 1.0
        probe = probe.reshape(shape + (len(cols),))
        probe = np.moveaxis(probe, -1, 1)
        tau = apply_voigt(d, probe)
        out = probe + ifft2(green.apply(fft2(tau)), grid.shape)
        A[:, cols] = np.moveaxis(out, 1, -1).reshape(N, len(cols))
    E = np.asarray(load.as_array() if hasattr(load, "as_array") else load, dtype=float)
    rhs = np.broadcast_to(E[:, None, None], shape).ravel().copy()
    return DenseSystem(A, rhs, shape)


def dense_solve(material, medium, load, rcond=1e-12):
    """Strain field solving ``eps + Gamma (C - C0) eps = E`` exactly.

    Raises :class:`SingularSystemError` (with ``nullity``, the number of
    singular values below ``rcond`` times the largest) when the solution is
    not unique.
    """
    system = assemble(material, medium, load)
    s = scipy.linalg.svdvals(system.matrix)
    nullity = int(np.sum(s < rcond * s[0]))
    if nullity:
        raise SingularSystemError(
            f"I + Gamma d is singular: estimated null-space dimension {nullity}", nullity)
    eps = scipy.linalg.solve(system.matrix, system.rhs)
    return eps.reshape(system.shape)


def laminate_effective(E1, nu1, E2, nu2, f, normal=1):
    """Plane-strain effective Voigt stiffness of a two-phase laminate.

    ``f`` is the fraction of phase 1 and ``normal`` the stacking axis (1 or 2).
    Written here for normal 1: Traction components sigma11, sigma12
    and the tangential strain eps22 are uniform; the rest follows per phase.
    """
    if not 0 < f < 1:
        raise ValueError("fraction must lie in (0, 1)")
    phases = [(f, *lame_parameters(E1, nu1)), (1 - f, *lame_parameters(E2, nu2))]
    for _, lam, mu in phases:
        if not (mu > 0 and lam + mu > 0):
            raise ValueError("both phases must be positive definite")

    def avg(g):
        return sum(w * g(lam, mu) for w, lam, mu in phases)

    inv_m = avg(lambda lam, mu: 1 / (lam + 2 * mu))
    lam_m = avg(lambda lam, mu: lam / (lam + 2 * mu))
    C11 = 1 / inv_m
    C12 = lam_m / inv_m
    C22 = avg(lambda lam, mu: lam + 2 * mu - lam**2 / (lam + 2 * mu)) + lam_m**2 / inv_m
    C33 = 2 / avg(lambda lam, mu: 1 / mu)
    C = np.array([[C11, C12, 0.0], [C12, C22, 0.0], [0.0, 0.0, C33]])
    if normal == 2:
        P = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 1]])
        C = P @ C @ P
    elif normal != 1:
        raise ValueError("normal must be 1 or 2")
    return C
