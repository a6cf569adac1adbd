"""Recursive Projection Method around an arbitrary fixed-point map.

The iterate ``u`` is split as ``u = Z z + q`` with ``Z`` an orthonormal basis of
the subspace on which plain iteration is slow or unstable. Newton steps with
the small projected Jacobian ``H = Z^T F_u Z`` update ``z``; the rest of the
vector takes the ordinary fixed-point update. ``Z`` grows from the history of
``q`` increments whenever ``n_max`` iterations pass without convergence.

Strain fields are flattened component-major (all 11, then 22, then 12) and
row-major inside a component, i.e. plain ``ravel`` of a ``(3, ny, nx)`` array.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .spectral_core import SolveReport, average_stress, safe_residual
from .tensor2d import apply_voigt

log = logging.getLogger(__name__)


class RPMError(RuntimeError):
    pass


class SingularNewtonError(RPMError):
    """``I - H`` is singular: some direction of the basis is a neutral fixed-point direction."""


class StagnationError(RPMError):
    """Successive stable-part increments vanished, there is nothing to grow the basis from."""


@dataclass
class RPMConfig:
    n_max: int = 10
    tolerance: float = 1e-4
    max_basis: int = 100
    growth_ratio: float = 10.0
    fd_step: float | None = None
    max_outer: int = 10_000

    def __post_init__(self):
        if self.n_max < 2:
            raise ValueError("n_max must be at least 2 (two successive increments are needed)")
        if not self.growth_ratio > 1:
            raise ValueError("growth_ratio must exceed 1")
        if self.fd_step is not None and not self.fd_step > 0:
            raise ValueError("fd_step must be positive")
        if self.max_basis < 0:
            raise ValueError("max_basis must be non-negative")


def default_fd_step(u):
    return np.sqrt(np.finfo(float).eps) * (1.0 + np.max(np.abs(u)))


def _orthonormalize_against(Z, V):
    """Project the columns of ``V`` off ``span(Z)`` (twice, for round-off) and normalise."""
    for _ in range(2):
        if Z.shape[1]:
            V = V - Z @ (Z.T @ V)
    Q, _ = np.linalg.qr(V)
    return Q


def grow_basis(dq_prev, dq_curr, Z, kappa=10.0):
    """Extend ``Z`` with the dominant directions of the last two increments.

    ``D = [dq_curr, dq_prev] = D~ T`` by QR. One column of ``D~`` is added when
    ``|T11| >= kappa |T22|`` (a single real eigenvalue dominates), both
    otherwise (a complex pair). Returns ``(Z_new, n_added)``.
    """
    Z = np.asarray(Z, dtype=float).reshape(len(dq_curr), -1)
    if np.linalg.norm(dq_curr) < 1e-14:
        raise StagnationError("latest increment has norm below 1e-14; no growth signal")
    D = np.column_stack([dq_curr, dq_prev])
    for _ in range(2):
        if Z.shape[1]:
            D = D - Z @ (Z.T @ D)
    Dt, T = np.linalg.qr(D)
    t11, t22 = abs(T[0, 0]), abs(T[1, 1])
    if t22 <= kappa * np.finfo(float).eps * t11 or t11 >= kappa * t22:
        new = Dt[:, :1]
    else:
        new = Dt[:, :2]
    new = _orthonormalize_against(Z, new)
    return np.column_stack([Z, new]), new.shape[1]


def jacobian_times_basis(F, u, Fu, Z, h=None):
    """Forward-difference products ``F_u Z`` (one map evaluation per column)."""
    h = default_fd_step(u) if h is None else h
    Z = np.asarray(Z).reshape(len(u), -1)
    out = np.empty_like(Z)
    for j in range(Z.shape[1]):
        out[:, j] = (F(u + h * Z[:, j]) - Fu) / h
    return out


# I - H counts as singular when its smallest singular value is below this,
# relative to max(1, |H|). Directions that are neutral only up to the
# finite-difference error (about 1e-7) pass: in void cells such modes carry
# no stress and the Newton step along them does not affect the residual.
SINGULAR_TOL = 1e-12


def _check_newton_matrix(H):
    A = np.eye(len(H)) - H
    if len(H) == 0:
        return A
    s = np.linalg.svd(A, compute_uv=False)
    if not s[-1] > SINGULAR_TOL * max(1.0, np.linalg.norm(H, 2)):
        raise SingularNewtonError(
            f"I - H is singular (basis size {len(H)}, smallest singular value {s[-1]:.2e}): "
            "the map is neutral along a basis direction; try a larger basis cap or another reference medium"
        )
    return A


def newton_update(z, zeta, H):
    """``z + (I - H)^-1 (zeta - z)`` by a dense solve."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    A = _check_newton_matrix(np.atleast_2d(np.asarray(H, dtype=float)))
    return z + np.linalg.solve(A, np.asarray(zeta, dtype=float) - z)


class RPMState:
    """Basis, its Jacobian image and the factorised Newton matrix."""

    def __init__(self, n):
        self.Z = np.zeros((n, 0))
        self.W = np.zeros((n, 0))
        self.H = np.zeros((0, 0))
        self._lu = None
        self.nu = 0

    @property
    def m(self):
        return self.Z.shape[1]

    def extend(self, Z_new, W_new):
        Z_old, W_old = self.Z, self.W
        H = np.block([
            [self.H, Z_old.T @ W_new],
            [Z_new.T @ W_old, Z_new.T @ W_new],
        ])
        self.Z = np.column_stack([Z_old, Z_new])
        self.W = np.column_stack([W_old, W_new])
        self.set_H(H)

    def set_H(self, H):
        self.H = H
        self._lu = None
        self._lu = scipy.linalg.lu_factor(_check_newton_matrix(H))

    def newton(self, z, zeta):
        return z + scipy.linalg.lu_solve(self._lu, zeta - z)


def rpm_solve(F, u0, residual, config=None, callback=None, event_log=None):
    """Stabilised fixed-point solve of ``u = F(u)``.

    ``residual(u)`` is the convergence measure compared with
    ``config.tolerance``. Returns ``(u, report)``; hitting ``max_outer`` or a
    stagnating increment gives ``converged=False`` rather than an exception.
    ``event_log`` (a writable text stream) receives one line per iteration
    and per basis growth.
    """
    config = config or RPMConfig()
    u = np.array(u0, dtype=float)
    state = RPMState(u.size)
    report = SolveReport()
    t0 = time.perf_counter()

    xi = F(u)
    report.operator_evaluations = 1
    q_hist = []
    cap_logged = False
    while report.iterations < config.max_outer:
        if state.m:
            Z = state.Z
            z = Z.T @ u
            zeta = Z.T @ xi
            q = xi - Z @ zeta
            u = Z @ state.newton(z, zeta) + q
        else:
            q = xi
            u = xi
        xi = F(u)
        report.operator_evaluations += 1
        report.iterations += 1
        state.nu += 1
        q_hist = (q_hist + [q])[-3:]

        err = residual(u)
        report.residual_history.append(err)
        if event_log is not None:
            event_log.write(f"iter {report.iterations} residual {err:.6e} basis {state.m}\n")
        if callback is not None:
            callback(report.iterations, u, err)
        if err <= config.tolerance:
            report.converged = True
            break
        if not np.isfinite(err):
            report.message = "diverged: residual is not finite"
            break

        if state.nu > config.n_max:
            if state.m >= config.max_basis:
                if not cap_logged and config.max_basis > 0:
                    log.info("basis cap %d reached at iteration %d", config.max_basis, report.iterations)
                    cap_logged = True
                state.nu = 0
                continue
            dq_curr = q_hist[-1] - q_hist[-2]
            dq_prev = q_hist[-2] - q_hist[-3]
            try:
                Z_full, added = grow_basis(dq_prev, dq_curr, state.Z, config.growth_ratio)
            except StagnationError as exc:
                report.message = str(exc)
                break
            added = min(added, config.max_basis - state.m)
            Z_new = Z_full[:, state.m:state.m + added]
            W_new = jacobian_times_basis(F, u, xi, Z_new, config.fd_step)
            report.operator_evaluations += added
            try:
                state.extend(Z_new, W_new)
            except SingularNewtonError:
                # H is only refreshed when the incremental one fails.
                W = jacobian_times_basis(F, u, xi, state.Z, config.fd_step)
                report.operator_evaluations += state.m
                state.W = W
                state.set_H(state.Z.T @ W)
            event = {"iteration": report.iterations, "residual": err, "added": added, "basis_size": state.m}
            report.growth_events.append(event)
            if event_log is not None:
                event_log.write(f"grow iter {report.iterations} added {added} basis {state.m}\n")
            state.nu = 0
            q_hist = []

    report.basis_size = state.m
    report.elapsed = time.perf_counter() - t0
    if not report.converged and not report.message:
        report.message = f"no convergence within {config.max_outer} outer iterations"
    report.state = state
    return u, report


def _invert_field(S):
    inv = np.linalg.inv(np.moveaxis(S, (0, 1), (-2, -1)))
    return np.ascontiguousarray(np.moveaxis(inv, (-2, -1), (0, 1)))


def rpm_solve_scheme(scheme, config=None, callback=None, event_log=None, coordinates="auto"):
    """Run :func:`rpm_solve` around a :class:`~rpmfft.spectral_core.Scheme`.

    ``coordinates`` selects the vector RPM works on: ``"state"`` flattens the
    scheme state directly, ``"scheme"`` applies the scheme's
    :meth:`~rpmfft.spectral_core.Scheme.coordinate_map` first, and ``"auto"``
    uses the map when the scheme has one. ``callback(iteration, state,
    residual)`` receives the scheme state, as in
    :func:`~rpmfft.spectral_core.solve_fixed_point`. Returns the strain field
    and the report (with ``effective_stress`` set).
    """
    if coordinates not in ("auto", "state", "scheme"):
        raise ValueError(f"unknown coordinates {coordinates!r}")
    problem = scheme.problem
    x0 = scheme.initial()
    shape = x0.shape
    S = None if coordinates == "state" else scheme.coordinate_map()
    if coordinates == "scheme" and S is None:
        raise ValueError(f"scheme {scheme.name!r} defines no coordinate map")

    if S is None:
        to_state = lambda v: v.reshape(shape)
        from_state = np.ravel
    else:
        S_inv = _invert_field(S)
        to_state = lambda v: apply_voigt(S_inv, v.reshape(shape))
        from_state = lambda x: apply_voigt(S, x).ravel()

    def F(v):
        return from_state(scheme.step(to_state(v)))

    def res(v):
        return safe_residual(problem, scheme.strain(to_state(v)))

    cb = None if callback is None else (lambda i, v, err: callback(i, to_state(v), err))
    u, report = rpm_solve(F, from_state(x0), res, config, cb, event_log)
    eps = scheme.strain(to_state(u))
    report.effective_stress = average_stress(problem.material, eps)
    return eps, report
