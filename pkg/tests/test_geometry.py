import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fieldsplit.geometry import (
    MILLIDARCY,
    ConfigurationError,
    RockProps,
    build_cartesian_grid,
    load_grid_file,
    save_grid_file,
    tpfa_transmissibility,
)


def test_two_cells_in_a_row():
    g = build_cartesian_grid(2, 1, 1.0, 1.0, "vertical")
    assert g.num_interfaces == 1
    assert g.interfaces == [(0, 1)]
    np.testing.assert_allclose(g.depth, [0.5, 0.5])


def test_two_cells_stacked():
    g = build_cartesian_grid(1, 2, 1.0, 1.0, "vertical")
    np.testing.assert_allclose(g.depth, [0.5, 1.5])


def test_hundred_square_box():
    g = build_cartesian_grid(100, 100, 0.3048, 0.3048, "vertical")
    assert g.num_interfaces == 2 * 100 * 99
    np.testing.assert_allclose(g.cell_volume, 0.3048**3)


@pytest.mark.parametrize(
    "args",
    [(0, 1, 1.0, 1.0), (1, 1, 0.0, 1.0), (1, 1, 1.0, -2.0), (2.5, 1, 1.0, 1.0)],
)
def test_invalid_dimensions(args):
    with pytest.raises(ConfigurationError):
        build_cartesian_grid(*args)


def test_invalid_tilt_and_orientation():
    with pytest.raises(ConfigurationError):
        build_cartesian_grid(2, 2, 1, 1, tilt_deg=91)
    with pytest.raises(ConfigurationError):
        build_cartesian_grid(2, 2, 1, 1, orientation="diagonal")


def test_tilted_horizontal_depth():
    g = build_cartesian_grid(3, 4, 2.0, 5.0, "horizontal", tilt_deg=60.0)
    _, y = g.cell_centers()
    np.testing.assert_allclose(g.depth, y * math.sin(math.radians(60.0)))
    flat = build_cartesian_grid(3, 4, 2.0, 5.0, "horizontal")
    np.testing.assert_array_equal(flat.depth, 0.0)


def test_unit_transmissibility():
    g = build_cartesian_grid(2, 1, 1.0, 1.0, "horizontal", thickness=1.0)
    T = tpfa_transmissibility(g, RockProps.uniform(2, 0.2, 2e-13))
    np.testing.assert_allclose(T, [2e-13], rtol=1e-14)


def test_harmonic_transmissibility():
    g = build_cartesian_grid(2, 1, 1.0, 1.0, "horizontal", thickness=1.0)
    T = tpfa_transmissibility(g, RockProps(np.array([0.2, 0.2]), np.array([1e-13, 3e-13])))
    # 2 k_K k_L / (k_K + k_L) for unit geometry
    np.testing.assert_allclose(T, [1.5e-13], rtol=1e-14)


def test_zero_permeability_rejected():
    with pytest.raises(ConfigurationError):
        RockProps(np.array([0.2, 0.2]), np.array([0.0, 1e-13]))


def test_rock_validation():
    with pytest.raises(ConfigurationError):
        RockProps(np.array([0.0]), np.array([1e-13]))
    with pytest.raises(ConfigurationError):
        RockProps(np.array([0.2, 0.2]), np.array([1e-13]))


def test_size_mismatch_rejected():
    g = build_cartesian_grid(2, 2, 1.0, 1.0)
    with pytest.raises(ConfigurationError):
        tpfa_transmissibility(g, RockProps.uniform(3, 0.2, 1e-13))


@given(
    nx=st.integers(1, 7),
    nz=st.integers(1, 7),
    dx=st.floats(0.1, 50.0),
    dz=st.floats(0.1, 50.0),
    tilt=st.floats(0.0, 90.0),
    orientation=st.sampled_from(["vertical", "horizontal"]),
)
def test_grid_invariants(nx, nz, dx, dz, tilt, orientation):
    g = build_cartesian_grid(nx, nz, dx, dz, orientation, tilt)
    pairs = g.interfaces
    assert len(pairs) == len(set(pairs)) == nx * (nz - 1) + nz * (nx - 1)
    assert all(k < l for k, l in pairs)
    for k, l in pairs:
        rk, ck = divmod(k, nx)
        rl, cl = divmod(l, nx)
        assert (rl - rk, cl - ck) in ((0, 1), (1, 0))
    assert np.all(g.cell_volume > 0)
    assert np.all(g.half_trans_k > 0) and np.all(g.half_trans_l > 0)
    domain = nx * dx * nz * dz * g.thickness
    assert math.isclose(g.cell_volume.sum(), domain, rel_tol=1e-12)
    # depth is affine in the cell-center coordinates
    x, z = g.cell_centers()
    A = np.column_stack([x, z, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, g.depth, rcond=None)
    np.testing.assert_allclose(A @ coef, g.depth, atol=1e-9 * (1 + np.abs(g.depth).max()))


@given(nz=st.integers(2, 9), tilt=st.floats(0.0, 80.0))
def test_vertical_depth_increases_with_row(nz, tilt):
    g = build_cartesian_grid(3, nz, 1.0, 2.0, "vertical", tilt)
    depth = g.depth.reshape(nz, 3)
    assert np.all(np.diff(depth, axis=0) > 0)


@given(st.lists(st.floats(1e-3, 1e4), min_size=2, max_size=2))
def test_transmissibility_symmetric(perms):
    g = build_cartesian_grid(2, 1, 1.0, 1.0)
    k = np.array(perms) * MILLIDARCY
    t1 = tpfa_transmissibility(g, RockProps(np.full(2, 0.2), k))
    t2 = tpfa_transmissibility(g, RockProps(np.full(2, 0.2), k[::-1]))
    np.testing.assert_allclose(t1, t2, rtol=1e-14)


def test_grid_file_round_trip(tmp_path):
    values = np.arange(6.0).reshape(2, 3) * 1.5e-13 + 1e-15
    path = tmp_path / "perm.txt"
    save_grid_file(path, values)
    assert path.read_text().splitlines()[0] == "3 2"
    np.testing.assert_array_equal(load_grid_file(path), values)


def test_grid_file_errors(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("2 2\n1 2 3\n")
    with pytest.raises(ConfigurationError, match="expected 4 values"):
        load_grid_file(path)
    path.write_text("2")
    with pytest.raises(ConfigurationError):
        load_grid_file(path)
