"""Symmetric 2D tensors and 3x3 Voigt matrices for plane-strain elasticity.

Strain-like and stress-like tensors are stored as ``(11, 22, 12)`` with the
tensor shear component (not the engineering shear ``2*e12``). Stiffness
matrices map that vector onto the stress vector in the same ordering, so the
isotropic shear entry is ``2*mu``. The double contraction ``a : b`` therefore
needs the weights ``(1, 1, 2)``, see :data:`ENERGY_WEIGHTS`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ENERGY_WEIGHTS = np.array([1.0, 1.0, 2.0])


class SingularStiffnessError(np.linalg.LinAlgError):
    """A 3x3 Voigt block could not be inverted."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class SymTensor2:
    e11: float = 0.0
    e22: float = 0.0
    e12: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError(f"non-finite tensor components: {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.e11, self.e22, self.e12], dtype=float)

    @classmethod
    def from_array(cls, a) -> "SymTensor2":
        a = np.asarray(a, dtype=float).reshape(3)
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def __add__(self, other):
        return SymTensor2.from_array(self.as_array() + other.as_array())

    def __mul__(self, c):
        return SymTensor2.from_array(c * self.as_array())

    __rmul__ = __mul__

    def norm(self) -> float:
        """Frobenius norm of the full 2x2 tensor."""
        return float(np.sqrt(ddot(self.as_array(), self.as_array())))


def lame_parameters(E, nu):
    """Return ``(lambda, mu)`` for Young's modulus ``E`` and Poisson ratio ``nu``."""
    _check_moduli(E, nu)
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return lam, mu


def _check_moduli(E, nu):
    if not -1.0 < nu < 0.5:
        raise ValueError(f"Poisson ratio must lie in (-1, 0.5), got {nu}")
    if E < 0:
        raise ValueError(f"Young's modulus must be non-negative, got {E}")


def stiffness_from_lame(lam, mu) -> np.ndarray:
    return np.array([
        [lam + 2.0 * mu, lam, 0.0],
        [lam, lam + 2.0 * mu, 0.0],
        [0.0, 0.0, 2.0 * mu],
    ])


def isotropic_stiffness(E, nu) -> np.ndarray:
    """Plane-strain isotropic stiffness as a 3x3 Voigt matrix."""
    return stiffness_from_lame(*lame_parameters(E, nu))


def apply_voigt(M, t):
    """Apply a Voigt matrix to a tensor.

    ``t`` may be a :class:`SymTensor2`, a length-3 vector, or a field whose
    leading axis holds the three components. ``M`` may be a single 3x3
    matrix or a field of them with shape ``(3, 3, ...)`` matching ``t``.
    """
    if isinstance(t, SymTensor2):
        return SymTensor2.from_array(np.asarray(M) @ t.as_array())
    M = np.asarray(M)
    t = np.asarray(t)
    if M.ndim == 2:
        return np.tensordot(M, t, axes=(1, 0))
    return np.einsum("ij...,j...->i...", M, t)


def ddot(a, b):
    """Double contraction ``a : b`` of Voigt vectors (or fields of them)."""
    a = np.asarray(a)
    b = np.asarray(b)
    w = ENERGY_WEIGHTS.reshape((3,) + (1,) * (a.ndim - 1))
    return np.sum(w * a * b, axis=0)


def invert_voigt(M, cond_limit=1e14):
    """Invert a 3x3 Voigt matrix, or a stack of them with shape ``(n, 3, 3)``.

    Raises :class:`SingularStiffnessError` carrying the index of the first
    offending block when the condition number exceeds ``cond_limit``.
    """
    M = np.asarray(M, dtype=float)
    stack = M.reshape(-1, 3, 3)
    cond = np.linalg.cond(stack)
    bad = np.flatnonzero(~(cond < cond_limit))
    if bad.size:
        idx = int(bad[0]) if M.ndim > 2 else None
        raise SingularStiffnessError(
            f"singular Voigt matrix (condition number {cond[bad[0]]:.3g})"
            + (f" at index {idx}" if idx is not None else ""),
            index=idx,
        )
    return np.linalg.inv(stack).reshape(M.shape)
