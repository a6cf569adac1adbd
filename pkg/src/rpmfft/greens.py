"""Reference medium and the periodic Green operator of isotropic elasticity.

The operator is evaluated at the discrete frequencies
``xi = 2*pi*(n_x/lx, n_y/ly)`` of a real-to-complex FFT layout. On an even
grid, modes carrying a Nyquist index use ``inv(C0)`` instead of the
continuous formula, which forces the stress of those modes to vanish and
keeps ``Gamma C0`` an exact projector on the real FFT representation.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .tensor2d import lame_parameters, stiffness_from_lame


@dataclass(frozen=True)
class ReferenceMedium:
    lam: float
    mu: float

    def __post_init__(self):
        if not self.mu > 0 or not self.lam + 2 * self.mu > 0:
            raise ValueError(f"reference medium must be positive-definite (lam={self.lam}, mu={self.mu})")

    @classmethod
    def from_young(cls, E, nu):
        lam, mu = lame_parameters(E, nu)
        return cls(lam, mu)

    @property
    def stiffness(self):
        return stiffness_from_lame(self.lam, self.mu)

    def scaled(self, c):
        return ReferenceMedium(c * self.lam, c * self.mu)

    @property
    def young(self):
        lam, mu = self.lam, self.mu
        return mu * (3 * lam + 2 * mu) / (lam + mu)

    @property
    def poisson(self):
        return self.lam / (2 * (self.lam + self.mu))


def reference_from_average(E_f, E_m, nu_o):
    """Reference medium with modulus ``(E_f + E_m)/2`` and Poisson ratio ``nu_o``."""
    if E_f < 0 or E_m < 0 or E_f + E_m <= 0:
        raise ValueError("moduli must be non-negative and not both zero")
    return ReferenceMedium.from_young(0.5 * (E_f + E_m), nu_o)


def gamma_hat(medium, xi):
    """Voigt action (3x3) of the Green operator at a single nonzero frequency.

    Built from the fourth-order expression
    ``(d_ki x_h x_j + d_hi x_k x_j + d_kj x_h x_i + d_hj x_k x_i)/(4 mu |x|^2)
    - (lam+mu)/(mu (lam+2mu)) x_i x_j x_k x_h / |x|^4``. Columns acting on the
    shear component include both ``ij = 12`` and ``21`` terms.
    """
    xi = np.asarray(xi, dtype=float)
    q2 = xi @ xi
    if q2 == 0:
        raise ValueError("gamma_hat is undefined at zero frequency")
    lam, mu = medium.lam, medium.mu
    d = np.eye(2)
    G4 = np.empty((2, 2, 2, 2))
    for k in range(2):
        for h in range(2):
            for i in range(2):
                for j in range(2):
                    G4[k, h, i, j] = (
                        d[k, i] * xi[h] * xi[j] + d[h, i] * xi[k] * xi[j]
                        + d[k, j] * xi[h] * xi[i] + d[h, j] * xi[k] * xi[i]
                    ) / (4 * mu * q2) - (lam + mu) / (mu * (lam + 2 * mu)) * xi[i] * xi[j] * xi[k] * xi[h] / q2**2
    pairs = [(0, 0), (1, 1), (0, 1)]
    out = np.empty((3, 3))
    for a, (k, h) in enumerate(pairs):
        for b, (i, j) in enumerate(pairs):
            out[a, b] = G4[k, h, i, j] if i == j else G4[k, h, i, j] + G4[k, h, j, i]
    return out


class FrequencyGrid:
    """Frequencies of the ``rfft2`` layout of a ``(ny, nx)`` real field."""

    def __init__(self, grid):
        self.grid = grid
        ky = np.fft.fftfreq(grid.ny, d=grid.ly / grid.ny)
        kx = np.fft.rfftfreq(grid.nx, d=grid.lx / grid.nx)
        self.xi2, self.xi1 = np.meshgrid(2 * np.pi * ky, 2 * np.pi * kx, indexing="ij")
        iy = np.arange(grid.ny)
        ix = np.arange(kx.size)
        nyq_y = (grid.ny % 2 == 0) & (iy == grid.ny // 2)
        nyq_x = (grid.nx % 2 == 0) & (ix == grid.nx // 2)
        self.nyquist = nyq_y[:, None] | nyq_x[None, :]
        # Hermitian weight of each stored mode in a full-spectrum sum.
        w = np.full(kx.size, 2.0)
        w[0] = 1.0
        if grid.nx % 2 == 0:
            w[-1] = 1.0
        self.weight = np.broadcast_to(w, self.xi1.shape)

    @property
    def shape(self):
        return self.xi1.shape


class GreenOperator:
    """Green operator of a reference medium, tabulated on a grid's frequencies."""

    def __init__(self, medium, grid):
        self.medium = medium
        self.grid = grid
        self.freq = FrequencyGrid(grid)

    @cached_property
    def table(self):
        """Voigt action at every stored frequency, shape ``(3, 3, ny, nx//2+1)``."""
        f = self.freq
        q = np.hypot(f.xi1, f.xi2)
        zero = q == 0
        q[zero] = 1.0
        n1, n2 = f.xi1 / q, f.xi2 / q
        lam, mu = self.medium.lam, self.medium.mu
        c = (lam + mu) / (lam + 2 * mu)
        G = np.empty((3, 3) + f.shape)
        # Traction t = tau.n for unit tau in each Voigt slot, then
        # a = (t - c n (n.t))/mu and eps = sym(n (x) a).
        for b, (t1, t2) in enumerate([(n1, 0 * n1), (0 * n2, n2), (n2, n1)]):
            nt = n1 * t1 + n2 * t2
            a1 = (t1 - c * n1 * nt) / mu
            a2 = (t2 - c * n2 * nt) / mu
            G[0, b] = n1 * a1
            G[1, b] = n2 * a2
            G[2, b] = 0.5 * (n1 * a2 + n2 * a1)
        C0inv = np.linalg.inv(self.medium.stiffness)
        G[:, :, f.nyquist] = C0inv[:, :, None]
        G[:, :, zero] = 0.0
        return G

    def apply(self, field_hat):
        """Per-frequency product; the zero-frequency entry of the result is 0.

        ``field_hat`` has the components on axis 0 and the frequencies on the
        last two axes; axes in between are batch axes.
        """
        field_hat = np.asarray(field_hat)
        if field_hat.shape[0] != 3 or field_hat.shape[-2:] != self.freq.shape:
            raise ValueError(f"Fourier field shape {field_hat.shape} does not match (3, ..., {self.freq.shape})")
        G = self.table
        return np.stack([
            G[a, 0] * field_hat[0] + G[a, 1] * field_hat[1] + G[a, 2] * field_hat[2]
            for a in range(3)
        ])


def apply_gamma(medium, field_hat, grid):
    return GreenOperator(medium, grid).apply(field_hat)
