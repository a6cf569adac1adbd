import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rpmfft.greens import reference_from_average
from rpmfft.microstructure import Grid2, homogeneous, single_fiber
from rpmfft.rpm import (
    RPMConfig, RPMState, SingularNewtonError, StagnationError, grow_basis, jacobian_times_basis,
    newton_update, rpm_solve, rpm_solve_scheme,
)
from rpmfft.spectral_core import (
    CellProblem, Classical, FixedPointConfig, LoadCase, Polarization, residual, solve_fixed_point,
)

LOAD = LoadCase.of(0.0, 0.0, 0.005)


def synthetic(N, unstable, stable_radius=0.2, seed=0):
    """``A = Q B Q^T`` with the given unstable part and a stable diagonal.

    ``unstable`` lists real eigenvalues or ``(modulus, angle)`` complex pairs.
    The subspace recovered by RPM carries stable contamination of order
    ``(stable_radius / min |unstable|) ** n_max``, so the stable spectrum is
    kept well inside the unit disk.
    """
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.normal(size=(N, N)))
    B = np.zeros((N, N))
    i, cols = 0, []
    for mu in unstable:
        if np.isscalar(mu):
            B[i, i] = mu
            cols.append(i)
            i += 1
        else:
            r, th = mu
            B[i:i + 2, i:i + 2] = r * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
            cols += [i, i + 1]
            i += 2
    B[i:, i:] = np.diag(rng.uniform(-stable_radius, stable_radius, N - i))
    return Q @ B @ Q.T, Q[:, cols], rng.normal(size=N)


def principal_sine(U, Z):
    return np.linalg.norm(U - Z @ (Z.T @ U), 2)


@pytest.mark.parametrize("unstable", [[1.5], [(1.3, 0.7)], [1.5, -2.0, 1.2]], ids=["real", "pair", "three"])
def test_synthetic_unstable_spectra(unstable):
    A, U, b = synthetic(60, unstable)
    u_star = np.linalg.solve(np.eye(60) - A, b)

    def F(u):
        return A @ u + b

    u, rep = rpm_solve(F, np.zeros(60), lambda u: np.linalg.norm(F(u) - u) / np.linalg.norm(b),
                       RPMConfig(tolerance=1e-10))
    assert rep.converged
    assert rep.basis_size >= U.shape[1]
    assert principal_sine(U, rep.state.Z) <= 1e-6
    np.testing.assert_allclose(u, u_star, atol=1e-8)


def test_growth_counts_follow_the_diagonal_rule():
    A, _, b = synthetic(40, [1.5])
    _, rep = rpm_solve(lambda u: A @ u + b, np.zeros(40), lambda u: 1.0, RPMConfig(max_outer=12))
    assert [e["added"] for e in rep.growth_events] == [1]
    A, _, b = synthetic(40, [(1.3, 0.7)])
    _, rep = rpm_solve(lambda u: A @ u + b, np.zeros(40), lambda u: 1.0, RPMConfig(max_outer=12))
    assert [e["added"] for e in rep.growth_events] == [2]


def test_grow_basis_rank_deficient_adds_one(rng):
    d = rng.normal(size=30)
    Z, added = grow_basis(d, 2 * d, np.zeros((30, 0)))
    assert added == 1
    np.testing.assert_allclose(np.abs(Z[:, 0]), np.abs(d) / np.linalg.norm(d), atol=1e-12)


def test_grow_basis_rotation_adds_two():
    th = 0.7
    R = 1.1 * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    x = [np.array([1.0, 0.3])]
    for _ in range(3):
        x.append(R @ x[-1])
    dq = np.diff(np.array(x), axis=0)
    Z, added = grow_basis(dq[-2], dq[-1], np.zeros((2, 0)), kappa=10.0)
    assert added == 2
    np.testing.assert_allclose(Z.T @ Z, np.eye(2), atol=1e-12)


def test_grow_basis_finds_second_eigenvector(rng):
    N = 50
    Q, _ = np.linalg.qr(rng.normal(size=(N, N)))
    lam = np.concatenate([[3.0, 2.0], rng.uniform(-0.5, 0.5, N - 2)])
    A = Q @ np.diag(lam) @ Q.T
    Z = Q[:, :1]
    q = rng.normal(size=N)
    hist = []
    for _ in range(40):
        q = A @ q
        q -= Z @ (Z.T @ q)
        hist.append(q)
    Z2, added = grow_basis(hist[-2] - hist[-3], hist[-1] - hist[-2], Z)
    assert added == 1
    w, V = np.linalg.eigh(A)
    v2 = V[:, np.argsort(w)[-2]]
    assert abs(abs(Z2[:, 1] @ v2) - 1) < 1e-10


def test_grow_basis_stagnation():
    with pytest.raises(StagnationError):
        grow_basis(np.ones(4), np.zeros(4), np.zeros((4, 0)))


@given(st.integers(0, 5), st.integers(0, 2**31 - 1))
def test_grown_basis_orthonormal(m, seed):
    rng = np.random.default_rng(seed)
    N = 20
    Z = np.linalg.qr(rng.normal(size=(N, m)))[0] if m else np.zeros((N, 0))
    Z2, added = grow_basis(rng.normal(size=N), rng.normal(size=N), Z)
    assert added in (1, 2)
    np.testing.assert_allclose(Z2.T @ Z2, np.eye(m + added), atol=1e-10)
    np.testing.assert_array_equal(Z2[:, :m], Z)


@pytest.mark.parametrize("h", [1e-8, 1e-3, 1.0])
def test_jacobian_of_linear_map(h, rng):
    A = rng.normal(size=(15, 15))
    b = rng.normal(size=15)
    Z = np.linalg.qr(rng.normal(size=(15, 3)))[0]
    u = rng.normal(size=15)
    W = jacobian_times_basis(lambda v: A @ v + b, u, A @ u + b, Z, h)
    np.testing.assert_allclose(W, A @ Z, atol=1e-6 if h < 1e-6 else 1e-12)


def test_projected_jacobian_of_classical_step(rng):
    mat = single_fiber(Grid2(8, 8), 0.3, (10.0, 0.25), (1.0, 0.25))
    p = CellProblem(mat, reference_from_average(10.0, 1.0, 0.25), LOAD)
    shape = (3, 8, 8)
    N = 3 * 64

    def F(v):
        return Classical(p).step(v.reshape(shape)).ravel()

    u = rng.normal(size=N) * 1e-3
    Fu = F(u)
    dense = jacobian_times_basis(F, u, Fu, np.eye(N))
    Z = np.linalg.qr(rng.normal(size=(N, 4)))[0]
    H = Z.T @ jacobian_times_basis(F, u, Fu, Z)
    np.testing.assert_allclose(H, Z.T @ dense @ Z, atol=1e-6)


def test_projected_spectrum_in_hull(rng):
    N = 30
    Q, _ = np.linalg.qr(rng.normal(size=(N, N)))
    lam = rng.uniform(-2, 3, N)
    A = Q @ np.diag(lam) @ Q.T
    Z = np.linalg.qr(rng.normal(size=(N, 5)))[0]
    H = Z.T @ jacobian_times_basis(lambda v: A @ v, np.zeros(N), np.zeros(N), Z, 1.0)
    ev = np.linalg.eigvalsh(0.5 * (H + H.T))
    assert ev.min() >= lam.min() - 1e-10 and ev.max() <= lam.max() + 1e-10


def test_newton_update_examples():
    np.testing.assert_allclose(newton_update([0.3, -1.0], [0.3, -1.0], np.diag([0.5, 2.0])), [0.3, -1.0])
    assert newton_update(0.0, 1.0, 0.5)[0] == pytest.approx(2.0)
    with pytest.raises(SingularNewtonError):
        newton_update([0.0], [1.0], [[1.0]])


def test_newton_lands_on_invariant_component(rng):
    N = 40
    Q, _ = np.linalg.qr(rng.normal(size=(N, N)))
    lam = np.concatenate([[1.7, -1.4], rng.uniform(-0.5, 0.5, N - 2)])
    A = Q @ np.diag(lam) @ Q.T
    b = rng.normal(size=N)
    u_star = np.linalg.solve(np.eye(N) - A, b)
    Z = Q[:, :2]
    u = rng.normal(size=N)
    H = Z.T @ A @ Z
    z_new = newton_update(Z.T @ u, Z.T @ (A @ u + b), H)
    np.testing.assert_allclose(z_new, Z.T @ u_star, atol=1e-10)


def test_state_invariants_after_solve():
    A, _, b = synthetic(50, [1.5, -2.0, 1.2, (1.4, 1.0)])
    u, rep = rpm_solve(lambda v: A @ v + b, np.zeros(50), lambda v: np.linalg.norm(A @ v + b - v),
                       RPMConfig(tolerance=1e-9, max_basis=8))
    st_ = rep.state
    assert st_.m <= 8
    np.testing.assert_allclose(st_.Z.T @ st_.Z, np.eye(st_.m), atol=1e-10)
    np.testing.assert_allclose(st_.H, st_.Z.T @ st_.W, atol=1e-8)
    z = st_.Z.T @ u
    q = u - st_.Z @ z
    assert np.abs(st_.Z.T @ q).max() <= 1e-10 * np.linalg.norm(u)


def test_basis_cap_reports_non_convergence():
    A, _, b = synthetic(40, [1.5, -2.0, 1.2])
    u, rep = rpm_solve(lambda v: A @ v + b, np.zeros(40), lambda v: np.linalg.norm(A @ v + b - v),
                       RPMConfig(max_basis=1, max_outer=200))
    assert not rep.converged and rep.basis_size == 1


def test_neutral_direction_raises():
    # a unit difference step makes H exact for this linear map
    b = np.ones(5)
    with pytest.raises(SingularNewtonError):
        rpm_solve(lambda u: u + b, np.zeros(5), lambda u: 1.0, RPMConfig(n_max=3, fd_step=1.0))


def test_stagnation_stops_with_message():
    u, rep = rpm_solve(lambda u: np.ones_like(u), np.zeros(4), lambda u: 1.0, RPMConfig(n_max=2))
    assert not rep.converged and "norm" in rep.message


def test_config_validation():
    with pytest.raises(ValueError):
        RPMConfig(n_max=1)
    with pytest.raises(ValueError):
        RPMConfig(growth_ratio=1.0)
    with pytest.raises(ValueError):
        RPMConfig(fd_step=0.0)


def test_homogeneous_one_iteration_no_growth():
    mat = homogeneous(Grid2(8, 8), (1.0, 0.25))
    p = CellProblem(mat, reference_from_average(1.0, 1.0, 0.25), LOAD)
    for scheme in (Classical(p), Polarization(p)):
        eps, rep = rpm_solve_scheme(scheme)
        assert rep.converged and rep.iterations == 1 and rep.basis_size == 0
        np.testing.assert_allclose(eps, p.uniform(), atol=1e-15)


@pytest.mark.parametrize("coordinates", ["state", "auto"])
def test_wrap_around_matches_fixed_point(coordinates):
    mat = single_fiber(Grid2(32, 32), 0.2, (20.0, 0.25), (1.0, 0.25))
    p = CellProblem(mat, reference_from_average(20.0, 1.0, 0.25), LOAD)
    scheme = Polarization(p)
    plain, wrapped = [], []
    solve_fixed_point(scheme, FixedPointConfig(max_iterations=30, tolerance=1e-14),
                      callback=lambda i, s, r: plain.append(s.copy()))
    rpm_solve_scheme(scheme, RPMConfig(max_basis=0, max_outer=30, tolerance=1e-14),
                     callback=lambda i, s, r: wrapped.append(s.copy()), coordinates=coordinates)
    assert len(plain) == len(wrapped) == 30
    assert max(np.abs(a - b).max() for a, b in zip(plain, wrapped)) <= 1e-12


def test_rpm_agrees_with_classical():
    mat = single_fiber(Grid2(32, 32), 0.2, (5.8, 0.25), (1.0, 0.25))
    p = CellProblem(mat, reference_from_average(5.8, 1.0, 0.25), LOAD)
    tol = 1e-5
    e1, r1 = solve_fixed_point(Classical(p), FixedPointConfig(tolerance=tol))
    e2, r2 = rpm_solve_scheme(Classical(p), RPMConfig(tolerance=tol))
    assert r1.converged and r2.converged
    assert residual(p, e2) == pytest.approx(r2.final_residual)
    assert residual(p, e2) <= tol
    assert np.abs(e1 - e2).max() <= 10 * tol * 0.005


def test_event_log_lines():
    A, _, b = synthetic(30, [1.5])
    log = io.StringIO()
    _, rep = rpm_solve(lambda v: A @ v + b, np.zeros(30), lambda v: np.linalg.norm(A @ v + b - v),
                       RPMConfig(tolerance=1e-9), event_log=log)
    lines = log.getvalue().splitlines()
    assert sum(line.startswith("iter ") for line in lines) == rep.iterations
    assert sum(line.startswith("grow ") for line in lines) == len(rep.growth_events)


def test_unknown_coordinates():
    mat = homogeneous(Grid2(4, 4), (1.0, 0.25))
    p = CellProblem(mat, reference_from_average(1.0, 1.0, 0.25), LOAD)
    with pytest.raises(ValueError):
        rpm_solve_scheme(Classical(p), coordinates="fourier")
    with pytest.raises(ValueError):
        rpm_solve_scheme(Classical(p), coordinates="scheme")
