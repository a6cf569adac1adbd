"""FFT fixed-point operators for the periodic Lippmann-Schwinger problem.

Strain, stress and polarization fields are plain arrays of shape
``(3, ny, nx)`` holding the Voigt components ``(11, 22, 12)``. A
:class:`CellProblem` bundles the material, reference medium and load with
the cached tables every scheme needs; the step functions are pure maps of
one iterate to the next.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft
import scipy.linalg

from .greens import GreenOperator
from .tensor2d import ENERGY_WEIGHTS, SingularStiffnessError, SymTensor2, apply_voigt, ddot


def fft2(f):
    return scipy.fft.rfft2(f, axes=(-2, -1))


def ifft2(f_hat, shape):
    return scipy.fft.irfft2(f_hat, s=shape, axes=(-2, -1))


@dataclass(frozen=True)
class LoadCase:
    """Prescribed average strain."""

    E: SymTensor2

    @classmethod
    def of(cls, e11=0.0, e22=0.0, e12=0.0):
        return cls(SymTensor2(e11, e22, e12))

    def as_array(self):
        return self.E.as_array()


@dataclass
class FixedPointConfig:
    tolerance: float = 1e-4
    max_iterations: int = 10_000
    alpha: float = 2.0
    beta: float = 2.0
    a: float = 0.1

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass
class SolveReport:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    converged: bool = False
    effective_stress: SymTensor2 | None = None
    elapsed: float = 0.0
    operator_evaluations: int = 0
    basis_size: int = 0
    growth_events: list = field(default_factory=list)
    message: str = ""

    @property
    def final_residual(self):
        return self.residual_history[-1] if self.residual_history else float("nan")


class CellProblem:
    """Unit-cell problem: material field, reference medium and average strain."""

    def __init__(self, material, medium, load):
        if not isinstance(load, LoadCase):
            load = LoadCase(SymTensor2.from_array(load))
        self.material = material
        self.medium = medium
        self.load = load
        self.grid = material.grid
        self.shape = material.grid.shape
        self.green = GreenOperator(medium, material.grid)
        self.E = load.as_array()
        self.C0 = medium.stiffness

    @cached_property
    def C(self):
        return self.material.stiffness_field()

    @cached_property
    def C_plus_C0_inv(self):
        try:
            inv = _invert_by_phase(self.material, lambda M: M + self.C0)
        except SingularStiffnessError as exc:
            raise SingularStiffnessError(f"C + C0 is singular at cell {exc.index}", exc.index) from None
        return np.moveaxis(inv, (-2, -1), (0, 1))

    @cached_property
    def d(self):
        return self.C - self.C0[:, :, None, None]

    @cached_property
    def d_pinv(self):
        """Pseudo-inverse of ``d = C - C0`` per cell (the inverse where it exists)."""
        out = np.empty_like(self.d)
        for p in self.material.present_phases():
            mask = self.material.phase_id == p
            out[:, :, mask] = np.linalg.pinv(self.material.phase_stiffness(p) - self.C0)[:, :, None]
        return out

    def uniform(self, t=None):
        t = self.E if t is None else np.asarray(t, dtype=float)
        return np.broadcast_to(t[:, None, None], (3,) + self.shape).copy()

    def stress(self, eps):
        return apply_voigt(self.C, eps)

    def fft(self, f):
        return fft2(f)

    def ifft(self, f_hat):
        return ifft2(f_hat, self.shape)

    def solve_constraint(self, tau, mean):
        """Strain with the given mean whose fluctuation is ``-Gamma tau``."""
        e_hat = -self.green.apply(self.fft(tau))
        e_hat[:, 0, 0] = np.asarray(mean) * self.grid.size
        return self.ifft(e_hat)


def _invert_by_phase(material, make_block):
    out = np.empty(material.grid.shape + (3, 3))
    for p in material.present_phases():
        M = make_block(material.phase_stiffness(p))
        cond = np.linalg.cond(M)
        if not cond < 1e14:
            idx = np.argwhere(material.phase_id == p)[0]
            raise SingularStiffnessError(f"singular block for phase {p}", tuple(int(i) for i in idx))
        out[material.phase_id == p] = np.linalg.inv(M)
    return out


def classical_step(problem, eps):
    """One basic iteration: ``eps - Gamma C eps`` with the mean pinned to E."""
    sig_hat = problem.fft(problem.stress(eps))
    corr = problem.green.apply(sig_hat)
    corr[:, 0, 0] = (eps.mean(axis=(1, 2)) - problem.E) * problem.grid.size
    return eps - problem.ifft(corr)


def polarization_step(problem, eps, alpha=2.0, beta=2.0):
    """One step of the two-parameter polarization scheme.

    ``alpha = beta = 2`` is the accelerated scheme. The
    auxiliary stress ``s_b = alpha*sigma - beta*C0 eps`` is the sign that makes
    the equilibrium solution a fixed point with the Green operator used here.
    """
    sig = problem.stress(eps)
    c0_eps = apply_voigt(problem.C0, eps)
    s_a = sig + (1.0 - beta) * c0_eps
    s_b = alpha * sig - beta * c0_eps
    eps_b = problem.solve_constraint(s_b, beta * problem.E)
    return apply_voigt(problem.C_plus_C0_inv, s_a + apply_voigt(problem.C0, eps_b))


def project_to_range_of_d(problem, tau):
    return apply_voigt(problem.d, apply_voigt(problem.d_pinv, tau))


def gradient_flow_step(problem, eps, tau, a):
    """Explicit descent step on the polarization followed by the constraint solve.

    ``tau <- tau - a (d^+ tau - eps)`` restricted to the range of ``d``, then
    ``eps = E - Gamma tau``. Returns ``(eps, tau)``.
    """
    tau = tau - a * (apply_voigt(problem.d_pinv, tau) - eps)
    tau = project_to_range_of_d(problem, tau)
    return problem.solve_constraint(tau, problem.E), tau


def equilibrium_error(sig, grid):
    """``rms(div sigma) / |<sigma>|`` evaluated in Fourier space.

    Uses the normalised transform so that the sum over all modes of
    ``|xi . sigma_hat|^2`` equals the cell average of ``|div sigma|^2``.
    """
    from .greens import FrequencyGrid

    freq = grid if isinstance(grid, FrequencyGrid) else FrequencyGrid(grid)
    n = freq.grid.size
    s = fft2(sig) / n
    mean = s[:, 0, 0].real
    denom = np.sqrt(ddot(mean, mean))
    if not denom > 0:
        raise ZeroDivisionError("average stress is zero; the relative equilibrium error is undefined, use an absolute residual")
    xi1, xi2 = freq.xi1, freq.xi2
    d1 = xi1 * s[0] + xi2 * s[2]
    d2 = xi1 * s[2] + xi2 * s[1]
    num = np.sum(freq.weight * (np.abs(d1) ** 2 + np.abs(d2) ** 2))
    return float(np.sqrt(num) / denom)


def average_stress(material, eps):
    sig = apply_voigt(material.stiffness_field(), eps)
    return SymTensor2.from_array(sig.mean(axis=(1, 2)))


def energy(problem, tau, eps, load=None):
    """Cell average of ``1/2 (tau : d^-1 tau + eps : C0 eps)``.

    With ``load`` given, the work term ``<tau> : E`` is subtracted; that
    variant is stationary at the solution for every polarization
    perturbation, not only mean-free ones.
    """
    d_pinv = problem.d_pinv
    tau_in_range = project_to_range_of_d(problem, tau)
    scale = max(np.max(np.abs(tau)), 1e-300)
    if np.max(np.abs(tau - tau_in_range)) > 1e-10 * scale:
        raise ValueError("polarization has a component outside the range of d = C - C0")
    density = ddot(tau, apply_voigt(d_pinv, tau)) + ddot(eps, apply_voigt(problem.C0, eps))
    value = 0.5 * float(density.mean())
    if load is not None:
        value -= float(ddot(tau.mean(axis=(1, 2)), np.asarray(load, dtype=float)))
    return value


class Scheme:
    """A fixed-point map ``state -> state`` with a way to read off the strain."""

    name = "scheme"

    def __init__(self, problem):
        self.problem = problem

    def initial(self):
        return self.problem.uniform()

    def step(self, state):
        raise NotImplementedError

    def strain(self, state):
        return state

    def coordinate_map(self):
        """Per-cell matrix ``S`` (shape ``(3, 3, ny, nx)``) with ``v = S state``, or None.

        Acceleration methods that work with Euclidean geometry (RPM) operate
        in ``v``. None means the state is used as it is.
        """
        return None

    def __call__(self, state):
        return self.step(state)


class Classical(Scheme):
    name = "classical"

    def step(self, state):
        return classical_step(self.problem, state)


class Polarization(Scheme):
    name = "polarization"

    def __init__(self, problem, alpha=2.0, beta=2.0):
        super().__init__(problem)
        self.alpha = alpha
        self.beta = beta

    def step(self, state):
        return polarization_step(self.problem, state, self.alpha, self.beta)

    def coordinate_map(self):
        # Energy norm of the polarization (C + C0) eps in the C0^-1 metric.
        # In plain strain components the map is strongly non-normal on stiff
        # phases, which spoils the increment-based subspace detection.
        problem = self.problem
        M = scipy.linalg.sqrtm(np.diag(ENERGY_WEIGHTS) @ np.linalg.inv(problem.C0)).real
        out = np.empty((3, 3) + problem.shape)
        for p in problem.material.present_phases():
            mask = problem.material.phase_id == p
            out[:, :, mask] = (M @ (problem.material.phase_stiffness(p) + problem.C0))[:, :, None]
        return out


class GradientFlow(Scheme):
    """Fixed-point map on the polarization; the strain follows from the constraint."""

    name = "gradient_flow"

    def __init__(self, problem, a=0.1):
        super().__init__(problem)
        self.a = a

    def initial(self):
        return project_to_range_of_d(self.problem, apply_voigt(self.problem.d, self.problem.uniform()))

    def strain(self, state):
        return self.problem.solve_constraint(state, self.problem.E)

    def step(self, state):
        return gradient_flow_step(self.problem, self.strain(state), state, self.a)[1]


def make_scheme(problem, name, **params):
    name = name.lower()
    if name == "classical":
        return Classical(problem)
    if name in ("polarization", "accelerated"):
        if name == "accelerated":
            params = {"alpha": 2.0, "beta": 2.0, **params}
        return Polarization(problem, params.get("alpha", 2.0), params.get("beta", 2.0))
    if name in ("gradient_flow", "gradient-flow"):
        return GradientFlow(problem, params.get("a", 0.1))
    raise ValueError(f"unknown scheme {name!r}")


def residual(problem, eps, freq=None):
    return equilibrium_error(problem.stress(eps), freq or problem.green.freq)


def safe_residual(problem, eps):
    """:func:`residual`, with ``inf`` for a vanishing mean stress or non-finite fields."""
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            err = residual(problem, eps)
    except (ZeroDivisionError, FloatingPointError):
        return np.inf
    return err if np.isfinite(err) else np.inf


def solve_fixed_point(scheme, config=None, state0=None, callback=None):
    """Iterate ``scheme`` from the uniform strain until the equilibrium error is small.

    Non-convergence is reported through ``report.converged``; nothing is raised.
    ``callback(iteration, state, residual)`` is called after every step.
    """
    config = config or FixedPointConfig()
    problem = scheme.problem
    state = scheme.initial() if state0 is None else state0
    report = SolveReport()
    t0 = time.perf_counter()
    while report.iterations < config.max_iterations:
        state = scheme.step(state)
        report.iterations += 1
        report.operator_evaluations += 1
        err = safe_residual(problem, scheme.strain(state))
        report.residual_history.append(err)
        if callback is not None:
            callback(report.iterations, state, err)
        if err <= config.tolerance:
            report.converged = True
            break
        if not np.isfinite(err):
            report.message = "diverged: residual is not finite"
            break
    eps = scheme.strain(state)
    report.elapsed = time.perf_counter() - t0
    report.effective_stress = average_stress(problem.material, eps)
    if not report.converged and not report.message:
        report.message = f"no convergence within {config.max_iterations} iterations"
    return eps, report


COMPONENTS = ("11", "22", "12")


def save_fields(prefix, grid, fields, meta=None, csv=False):
    """Dump named fields next to a JSON sidecar ``<prefix>.json``.

    ``fields`` maps a name to a ``(3, ny, nx)`` tensor field or an
    ``(ny, nx)`` scalar field. Each component goes to its own flat
    little-endian float64 file, row-major (rows along y). With ``csv=True`` a
    single ``<prefix>.csv`` with one line per cell is written as well.
    Returns the sidecar path.
    """
    import json
    from pathlib import Path

    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    entries = {}
    columns = {}
    for name, f in fields.items():
        f = np.asarray(f, dtype=float)
        comps = COMPONENTS if f.ndim == 3 else ("value",)
        planes = f if f.ndim == 3 else f[None]
        if planes.shape[1:] != grid.shape:
            raise ValueError(f"field {name!r} has shape {f.shape}, grid is {grid.shape}")
        files = []
        for c, plane in zip(comps, planes):
            path = prefix.with_name(f"{prefix.name}_{name}_{c}.bin")
            np.ascontiguousarray(plane, dtype="<f8").tofile(path)
            files.append(path.name)
            columns[f"{name}_{c}"] = plane.ravel()
        entries[name] = {"components": list(comps), "files": files}
    sidecar = {
        "format": "rpmfft-fields",
        "version": 1,
        "nx": grid.nx,
        "ny": grid.ny,
        "lx": grid.lx,
        "ly": grid.ly,
        "dtype": "<f8",
        "order": "row-major, rows along y",
        "fields": entries,
        **(meta or {}),
    }
    side = prefix.with_suffix(".json")
    side.write_text(json.dumps(sidecar, indent=2) + "\n")
    if csv:
        yy, xx = np.meshgrid(np.arange(grid.ny), np.arange(grid.nx), indexing="ij")
        data = np.column_stack([yy.ravel(), xx.ravel()] + list(columns.values()))
        header = ",".join(["iy", "ix"] + list(columns))
        np.savetxt(prefix.with_suffix(".csv"), data, delimiter=",", header=header, comments="",
                   fmt=["%d", "%d"] + ["%.17g"] * len(columns))
    return side


def load_fields(sidecar):
    """Inverse of :func:`save_fields`: ``(meta, {name: array})``."""
    import json
    from pathlib import Path

    sidecar = Path(sidecar)
    meta = json.loads(sidecar.read_text())
    shape = (meta["ny"], meta["nx"])
    out = {}
    for name, entry in meta["fields"].items():
        planes = [np.fromfile(sidecar.with_name(f), dtype="<f8").reshape(shape) for f in entry["files"]]
        out[name] = np.stack(planes) if len(planes) == 3 else planes[0]
    return meta, out
