"""Phase maps for periodic unit cells.

Arrays are indexed ``[row, col]`` with rows running along y (``ny`` of them)
and columns along x (``nx``). Row 0 is the first data line of a phase-map
file. Cells belong to a phase by a cell-center test; there is no partial
volume blending.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor2d import isotropic_stiffness


@dataclass(frozen=True)
class Grid2:
    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid needs at least 2x2 cells, got {self.nx}x{self.ny}")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError("cell dimensions must be positive")

    @property
    def shape(self):
        return (self.ny, self.nx)

    @property
    def size(self):
        return self.nx * self.ny

    def cell_centers(self):
        """Return ``(x, y)`` coordinate arrays of cell centers, each of ``shape``."""
        x = (np.arange(self.nx) + 0.5) * self.lx / self.nx
        y = (np.arange(self.ny) + 0.5) * self.ly / self.ny
        return np.meshgrid(x, y, indexing="xy")


@dataclass(frozen=True, eq=False)
class MaterialField:
    """Per-cell phase ids plus a table ``phase_id -> (E, nu)``."""

    grid: Grid2
    phase_id: np.ndarray
    phases: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = np.asarray(self.phase_id)
        if ids.shape != self.grid.shape:
            raise ValueError(f"phase map shape {ids.shape} does not match grid {self.grid.shape}")
        ids = ids.astype(np.int64)
        ids.setflags(write=False)
        object.__setattr__(self, "phase_id", ids)
        object.__setattr__(self, "phases", {int(k): (float(v[0]), float(v[1])) for k, v in self.phases.items()})
        missing = set(np.unique(ids).tolist()) - set(self.phases)
        if missing:
            raise ValueError(f"phase ids {sorted(missing)} have no entry in the phase table")
        present = np.unique(ids)
        if not any(self.phases[int(p)][0] > 0 for p in present):
            raise ValueError("at least one phase present in the cell must have E > 0")
        for E, nu in self.phases.values():
            isotropic_stiffness(E, nu)  # validates

    def phase_stiffness(self, phase):
        return isotropic_stiffness(*self.phases[int(phase)])

    def stiffness_field(self) -> np.ndarray:
        """Stiffness at every cell, shape ``(3, 3, ny, nx)``."""
        ids = sorted(self.phases)
        table = np.stack([self.phase_stiffness(p) for p in ids])
        lookup = np.searchsorted(ids, self.phase_id)
        return np.moveaxis(table[lookup], (0, 1), (2, 3))

    def present_phases(self):
        return [int(p) for p in np.unique(self.phase_id)]

    def moduli_range(self):
        """Smallest and largest Young's modulus among phases present in the cell."""
        Es = [self.phases[p][0] for p in self.present_phases()]
        return min(Es), max(Es)

    def shifted(self, dy, dx):
        """Periodically translated copy."""
        return MaterialField(self.grid, np.roll(self.phase_id, (dy, dx), axis=(0, 1)), self.phases)


def _check_pair(name, pair):
    E, nu = pair
    isotropic_stiffness(E, nu)
    return float(E), float(nu)


def homogeneous(grid, material):
    material = _check_pair("material", material)
    return MaterialField(grid, np.zeros(grid.shape, dtype=np.int64), {0: material})


def _disk(grid, cx, cy, radius):
    x, y = grid.cell_centers()
    return (x - cx) ** 2 + (y - cy) ** 2 <= radius**2


def single_fiber(grid, radius_ratio, fiber, matrix):
    """Circular fiber (phase 1) centred in the cell, matrix is phase 0.

    ``radius_ratio`` is the fiber radius divided by the shorter cell edge.
    """
    if not 0 < radius_ratio <= 0.5:
        raise ValueError(f"radius_ratio must lie in (0, 0.5], got {radius_ratio}")
    fiber = _check_pair("fiber", fiber)
    matrix = _check_pair("matrix", matrix)
    radius = radius_ratio * min(grid.lx, grid.ly)
    inside = _disk(grid, grid.lx / 2, grid.ly / 2, radius)
    if not inside.any():
        raise ValueError(
            f"fiber of radius {radius:g} contains no cell center on a {grid.nx}x{grid.ny} grid"
        )
    return MaterialField(grid, inside.astype(np.int64), {0: matrix, 1: fiber})


def two_fibers(grid, radius, separation, fiber, matrix):
    """Fibers of radius ``a`` (phase 1) and ``2a`` (phase 2) along the long axis.

    The pair is centred in the cell; ``separation`` is the center distance.
    """
    fiber = _check_pair("fiber", fiber)
    matrix = _check_pair("matrix", matrix)
    a = float(radius)
    if a <= 0:
        raise ValueError("fiber radius must be positive")
    if separation <= 3 * a:
        raise ValueError(f"fibers of radii {a:g} and {2 * a:g} overlap at separation {separation:g}")
    cx, cy = grid.lx / 2, grid.ly / 2
    c1 = cx - separation / 2
    c2 = cx + separation / 2
    if c1 - a < 0 or c2 + 2 * a > grid.lx or 2 * a > cy:
        raise ValueError("fibers do not fit inside the cell")
    ids = np.zeros(grid.shape, dtype=np.int64)
    ids[_disk(grid, c1, cy, a)] = 1
    ids[_disk(grid, c2, cy, 2 * a)] = 2
    if not (ids == 1).any() or not (ids == 2).any():
        raise ValueError("a fiber contains no cell center at this resolution")
    return MaterialField(grid, ids, {0: matrix, 1: fiber, 2: fiber})


def laminate(grid, fraction, phase1, phase2, normal=1):
    """Stripes with ``phase1`` (id 1) filling ``fraction`` of the cell.

    ``normal`` is the lamination direction: 1 for layers stacked along x
    (the phase varies across columns), 2 for stacking along y.
    """
    phase1 = _check_pair("phase1", phase1)
    phase2 = _check_pair("phase2", phase2)
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    if normal not in (1, 2):
        raise ValueError("normal must be 1 (x) or 2 (y)")
    n = grid.nx if normal == 1 else grid.ny
    count = fraction * n
    k = int(round(count))
    if abs(count - k) > 1e-9 * n:
        raise ValueError(f"fraction {fraction} is not representable with {n} cells ({count:g} layers)")
    ids = np.full(grid.shape, 2, dtype=np.int64)
    if normal == 1:
        ids[:, :k] = 1
    else:
        ids[:k, :] = 1
    return MaterialField(grid, ids, {1: phase1, 2: phase2})


def volume_fraction(material, phase):
    return float(np.count_nonzero(material.phase_id == phase)) / material.grid.size


def save_phase_map(path, material):
    ids = material.phase_id
    lines = [f"{material.grid.nx} {material.grid.ny}"]
    lines += [" ".join(str(v) for v in row) for row in ids]
    Path(path).write_text("\n".join(lines) + "\n")


def load_phase_map(path, phases, lx=1.0, ly=1.0):
    """Read a plain-text phase map: ``nx ny`` header then ``ny`` rows of ``nx`` ints."""
    text = Path(path).read_text().split("\n")
    rows = [line.split() for line in text if line.strip()]
    if not rows or len(rows[0]) != 2:
        raise ValueError(f"{path}: first line must be 'nx ny'")
    try:
        nx, ny = (int(v) for v in rows[0])
        data = [[int(v) for v in row] for row in rows[1:]]
    except ValueError as exc:
        raise ValueError(f"{path}: non-integer entry ({exc})") from None
    if len(data) != ny or any(len(row) != nx for row in data):
        raise ValueError(f"{path}: expected {ny} rows of {nx} values")
    ids = np.array(data, dtype=np.int64)
    unknown = sorted(set(np.unique(ids).tolist()) - {int(k) for k in phases})
    if unknown:
        raise ValueError(f"{path}: unknown phase ids {unknown}")
    return MaterialField(Grid2(nx, ny, lx, ly), ids, phases)
