import numpy as np
import pytest
from hypothesis import given, strategies as st

from rpmfft.microstructure import (
    Grid2, MaterialField, homogeneous, laminate, load_phase_map, save_phase_map, single_fiber,
    two_fibers, volume_fraction,
)

FIBER, MATRIX = (100.0, 0.25), (1.0, 0.25)


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid2(1, 4)
    with pytest.raises(ValueError):
        Grid2(4, 4, lx=0)
    assert Grid2(4, 3).shape == (3, 4)


def test_material_field_validation():
    g = Grid2(2, 2)
    with pytest.raises(ValueError):
        MaterialField(g, np.array([[0, 7], [0, 0]]), {0: MATRIX})
    with pytest.raises(ValueError):
        MaterialField(g, np.zeros((2, 2)), {0: (0.0, 0.3)})
    with pytest.raises(ValueError):
        MaterialField(g, np.zeros((3, 2)), {0: MATRIX})


def test_phase_map_is_read_only():
    m = homogeneous(Grid2(4, 4), MATRIX)
    with pytest.raises(ValueError):
        m.phase_id[0, 0] = 1


def test_stiffness_field_layout():
    m = single_fiber(Grid2(8, 6), 0.2, FIBER, MATRIX)
    C = m.stiffness_field()
    assert C.shape == (3, 3, 6, 8)
    np.testing.assert_array_equal(C[:, :, 3, 4], m.phase_stiffness(1))
    np.testing.assert_array_equal(C[:, :, 0, 0], m.phase_stiffness(0))


@pytest.mark.parametrize("f, n, cols", [(0.5, 8, 4), (0.25, 16, 4)])
def test_laminate_columns(f, n, cols):
    m = laminate(Grid2(n, n), f, FIBER, MATRIX)
    assert np.all(m.phase_id[:, :cols] == 1) and np.all(m.phase_id[:, cols:] == 2)
    assert volume_fraction(m, 1) == f


def test_laminate_normal_two_stacks_rows():
    m = laminate(Grid2(8, 8), 0.25, FIBER, MATRIX, normal=2)
    assert np.all(m.phase_id[:2] == 1) and np.all(m.phase_id[2:] == 2)


def test_laminate_rejects_unrepresentable_fraction():
    with pytest.raises(ValueError):
        laminate(Grid2(16, 16), 0.3, FIBER, MATRIX)


def test_single_fiber_fraction_canonical():
    # radius 1/32 of the edge gives the 0.3 % fiber of the canonical problem
    m = single_fiber(Grid2(2048, 2048), 1 / 32, FIBER, MATRIX)
    assert volume_fraction(m, 1) == pytest.approx(0.003, abs=2e-4)


def test_single_fiber_large_radius():
    m = single_fiber(Grid2(256, 256), 0.45, FIBER, MATRIX)
    assert volume_fraction(m, 1) == pytest.approx(np.pi * 0.45**2, abs=5e-3)


def test_single_fiber_degenerate_raises():
    with pytest.raises(ValueError):
        single_fiber(Grid2(16, 16), 1 / 32, FIBER, MATRIX)


def test_single_fiber_count_within_perimeter_bound():
    n, r = 256, 1 / 8
    m = single_fiber(Grid2(n, n), r, FIBER, MATRIX)
    perimeter_cells = 2 * np.pi * r * n
    assert abs(np.count_nonzero(m.phase_id == 1) - np.pi * r**2 * n * n) <= 2 * perimeter_cells


@pytest.mark.parametrize("n", [64, 128, 256, 512])
def test_fiber_fraction_converges(n):
    r = 0.2
    err = abs(volume_fraction(single_fiber(Grid2(n, n), r, FIBER, MATRIX), 1) - np.pi * r * r)
    assert err <= 2 * (2 * np.pi * r * n) / n**2


def test_same_fiber_and_matrix_is_homogeneous_in_stiffness():
    m = single_fiber(Grid2(16, 16), 0.25, MATRIX, MATRIX)
    C = m.stiffness_field()
    assert np.all(C == C[:, :, :1, :1])


def test_generators_are_deterministic():
    a = single_fiber(Grid2(64, 64), 0.2, FIBER, MATRIX)
    b = single_fiber(Grid2(64, 64), 0.2, FIBER, MATRIX)
    assert np.array_equal(a.phase_id, b.phase_id)


def test_two_fibers_geometry():
    g = Grid2(256, 128, lx=2.0, ly=1.0)
    m = two_fibers(g, 0.1, 1.0, FIBER, MATRIX)
    f1, f2 = volume_fraction(m, 1), volume_fraction(m, 2)
    assert f2 == pytest.approx(4 * f1, rel=0.1)
    # the larger fiber sits to the right of the smaller one
    x, _ = g.cell_centers()
    assert x[m.phase_id == 1].mean() == pytest.approx(0.5, abs=0.01)
    assert x[m.phase_id == 2].mean() == pytest.approx(1.5, abs=0.01)
    near = two_fibers(g, 0.1, 0.4, FIBER, MATRIX)
    assert volume_fraction(near, 1) == pytest.approx(f1, rel=0.1)


def test_two_fibers_overlap_raises():
    with pytest.raises(ValueError):
        two_fibers(Grid2(128, 64, 2.0, 1.0), 0.1, 0.29, FIBER, MATRIX)


def test_phase_map_file(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text("2 2\n0 0\n0 1\n")
    m = load_phase_map(p, {0: MATRIX, 1: FIBER})
    assert volume_fraction(m, 1) == 0.25
    assert m.phase_id[1, 1] == 1


def test_phase_map_unknown_id(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text("2 2\n0 7\n0 1\n")
    with pytest.raises(ValueError):
        load_phase_map(p, {0: MATRIX, 1: FIBER})


@pytest.mark.parametrize("text", ["2 2\n0 0\n", "2 2\n0 0 0\n0 1\n", "x y\n0 0\n0 0\n", ""])
def test_phase_map_malformed(tmp_path, text):
    p = tmp_path / "m.txt"
    p.write_text(text)
    with pytest.raises(ValueError):
        load_phase_map(p, {0: MATRIX, 1: FIBER})


def test_phase_map_round_trip(tmp_path):
    m = single_fiber(Grid2(24, 16), 0.3, FIBER, MATRIX)
    save_phase_map(tmp_path / "f.txt", m)
    back = load_phase_map(tmp_path / "f.txt", m.phases)
    assert np.array_equal(back.phase_id, m.phase_id)


@given(st.integers(2, 40), st.integers(2, 40), st.floats(0.05, 0.5))
def test_fiber_fields_are_valid(nx, ny, r):
    g = Grid2(nx, ny)
    try:
        m = single_fiber(g, r, FIBER, MATRIX)
    except ValueError:
        return
    assert set(m.present_phases()) <= {0, 1}
    assert 0 < volume_fraction(m, 1) <= 1


def test_homogeneous_fraction_and_shift():
    m = homogeneous(Grid2(4, 4), MATRIX)
    assert volume_fraction(m, 0) == 1.0
    f = single_fiber(Grid2(8, 8), 0.2, FIBER, MATRIX)
    assert np.array_equal(f.shifted(1, 2).phase_id, np.roll(f.phase_id, (1, 2), axis=(0, 1)))
