import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from silcarve.errors import DataError
from silcarve.fileio import read_volume, write_volume
from silcarve.volume import (
    GridSpec,
    TsdfVolume,
    cube_grid,
    extract_isosurface,
    occupancy,
    points_to_volume,
)


def sphere_sdf(grid: GridSpec, radius=1.0) -> np.ndarray:
    return np.linalg.norm(grid.centers_grid(), axis=-1) - radius


def test_isosurface_sphere_radius():
    grid = cube_grid(3.0, 32)
    sdf = sphere_sdf(grid)
    mesh = extract_isosurface(TsdfVolume(grid, sdf, sdf.min(), sdf.max()), 0.0)
    radii = np.linalg.norm(mesh.vertices, axis=1)
    assert np.abs(radii - 1.0).max() < 1.5 * grid.voxel_size


def test_isosurface_constant_volume_empty():
    grid = cube_grid(1.0, 8)
    vol = TsdfVolume(grid, np.full(grid.dims, 2.0), 0.0, 3.0)
    assert extract_isosurface(vol, 0.0).is_empty


def test_isosurface_level_outside_range_empty():
    grid = cube_grid(3.0, 16)
    sdf = sphere_sdf(grid)
    vol = TsdfVolume(grid, sdf, sdf.min(), sdf.max())
    assert extract_isosurface(vol, sdf.max() + 1.0).is_empty


def test_isosurface_halfspace_plane_exact():
    grid = cube_grid(2.0, 16)
    field = grid.centers_grid()[..., 0] - 0.1234  # linear SDF of a plane
    vol = TsdfVolume(grid, field, field.min(), field.max())
    mesh = extract_isosurface(vol, 0.0)
    assert not mesh.is_empty
    # linear interpolation is exact on linear fields
    assert np.abs(mesh.vertices[:, 0] - 0.1234).max() < 1e-6 * grid.voxel_size


def test_isosurface_negated_field_same_vertices():
    grid = cube_grid(3.0, 16)
    sdf = sphere_sdf(grid)
    m1 = extract_isosurface(TsdfVolume(grid, sdf, sdf.min(), sdf.max()), 0.0)
    m2 = extract_isosurface(TsdfVolume(grid, -sdf, -sdf.max(), -sdf.min()), 0.0)
    a = np.array(sorted(map(tuple, np.round(m1.vertices, 9))))
    b = np.array(sorted(map(tuple, np.round(m2.vertices, 9))))
    assert a.shape == b.shape
    assert np.abs(a - b).max() < 1e-9


def test_occupancy_trivial_cases():
    grid = cube_grid(1.0, 4)
    full = TsdfVolume(grid, np.full(grid.dims, -0.5), -1.0, 0.0)
    empty = TsdfVolume(grid, np.full(grid.dims, 0.5), 0.0, 1.0)
    assert occupancy(full).all()
    assert not occupancy(empty).any()


def test_truncation_bounds_validated():
    grid = cube_grid(1.0, 4)
    with pytest.raises(DataError):
        TsdfVolume(grid, np.full(grid.dims, 2.0), -1.0, 1.0)


def test_grid_requires_min_dims():
    with pytest.raises(DataError):
        GridSpec((1, 4, 4), np.zeros(3), 0.1)


def test_volume_file_roundtrip(tmp_path, rng):
    grid = GridSpec((5, 6, 7), np.array([-1.0, 0.5, 2.0]), 0.25)
    vals = rng.normal(size=grid.dims).astype(np.float32).astype(float)
    vol = TsdfVolume(grid, vals, float(vals.min()), float(vals.max()))
    path = tmp_path / "v.bin"
    write_volume(path, vol)
    back = read_volume(path)
    assert back.grid == grid
    assert np.array_equal(back.values, vals)


def test_volume_file_is_x_fastest(tmp_path):
    grid = GridSpec((2, 2, 2), np.zeros(3), 1.0)
    vals = np.arange(8, dtype=float).reshape(2, 2, 2)  # vals[x, y, z]
    write_volume(tmp_path / "v.bin", TsdfVolume(grid, vals, 0.0, 7.0))
    raw = np.frombuffer((tmp_path / "v.bin").read_bytes(), dtype="<f4")
    # x fastest, then y, then z: element order (x,y,z) = 000,100,010,110,001,...
    want = [vals[0, 0, 0], vals[1, 0, 0], vals[0, 1, 0], vals[1, 1, 0], vals[0, 0, 1]]
    assert list(raw[:5]) == want


def test_points_to_volume_wraps_points(rng):
    grid = cube_grid(4.0, 32)
    pts = rng.normal(size=(200, 3)) * 0.5
    vol = points_to_volume(pts, grid, shell_radius_voxels=1.5)
    mesh = extract_isosurface(vol, 0.0)
    assert not mesh.is_empty
    # every input point is inside the iso-0 set of the field
    idx = np.rint((pts - grid.origin) / grid.voxel_size).astype(int)
    assert (vol.values[idx[:, 0], idx[:, 1], idx[:, 2]] <= 0).all()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_volume_values_within_declared_bounds(seed):
    rng = np.random.default_rng(seed)
    grid = cube_grid(2.0, 6)
    lo = -float(rng.random())
    hi = float(rng.random()) + 0.1
    vals = rng.uniform(lo, hi, size=grid.dims)
    vol = TsdfVolume(grid, vals, lo, hi)
    assert vol.values.min() >= lo and vol.values.max() <= hi
