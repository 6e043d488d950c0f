import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from silcarve.cloud import (
    PointCloud,
    TriMesh,
    estimate_normals,
    knn_indices,
    knn_mean_sq_dist,
    sample_mesh_surface,
)
from silcarve.errors import DataError
from silcarve.fileio import read_obj, write_obj

from helpers import brute_force_knn_mean_sq


def test_knn_self_distance_zero():
    pts = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
    assert knn_mean_sq_dist(pts[0], pts, 1) == 0.0


def test_knn_mean_of_squares_hand_case():
    q = np.array([[1.0, 0.0], [0.0, 2.0], [3.0, 0.0]])
    assert knn_mean_sq_dist(np.zeros(2), q, 2) == pytest.approx(2.5)


def test_knn_matches_exhaustive_sort(rng):
    for _ in range(30):
        dim = int(rng.integers(2, 4))
        pts = rng.normal(size=(rng.integers(6, 40), dim))
        p = rng.normal(size=dim)
        for k in range(1, 6):
            got = knn_mean_sq_dist(p, pts, k)
            want = brute_force_knn_mean_sq(p, pts, k)
            assert got == pytest.approx(want, abs=1e-10)


def test_knn_insufficient_neighbors():
    with pytest.raises(DataError, match="insufficient"):
        knn_mean_sq_dist(np.zeros(2), np.zeros((2, 2)), 3)


def test_knn_tie_break_lowest_index():
    pts = np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [2.0, 0.0]])
    idx = knn_indices(np.zeros((1, 2)), pts, 3)[0]
    assert list(idx) == [0, 1, 2]


def test_knn_zero_iff_all_coincide(rng):
    pts = np.vstack([np.zeros((3, 3)), rng.normal(size=(4, 3)) + 5.0])
    assert knn_mean_sq_dist(np.zeros(3), pts, 3) == 0.0
    assert knn_mean_sq_dist(np.zeros(3), pts, 4) > 0.0


def test_normals_on_plane(rng):
    pts = np.column_stack([rng.normal(size=(60, 2)), np.zeros(60)])
    normals, valid = estimate_normals(pts, 8)
    assert valid.all()
    # all normals identical up to the field being consistently signed
    assert np.abs(np.abs(normals[:, 2]) - 1.0).max() < 1e-9
    assert np.abs(normals - normals[0]).max() < 1e-9


def test_normals_on_sphere_radial(rng):
    v = rng.normal(size=(400, 3))
    pts = v / np.linalg.norm(v, axis=1, keepdims=True)
    normals, valid = estimate_normals(pts, 8)
    cosang = np.abs(np.einsum("ij,ij->i", normals[valid], pts[valid]))
    frac = (cosang >= np.cos(np.deg2rad(15.0))).mean()
    assert frac >= 0.95


def test_normals_outward_on_sphere(rng):
    v = rng.normal(size=(400, 3))
    pts = v / np.linalg.norm(v, axis=1, keepdims=True)
    normals, valid = estimate_normals(pts, 8)
    # global orientation away from the centroid
    assert np.einsum("ij,ij->i", normals[valid], pts[valid]).sum() > 0


def test_normals_with_coincident_points():
    pts = np.array(
        [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]]
    )
    normals, valid = estimate_normals(pts, 5)
    assert valid.all()
    assert np.abs(np.abs(normals[:, 2]) - 1.0).max() < 1e-9


def test_normals_degenerate_line_flagged():
    t = np.linspace(0, 1, 12)
    pts = np.column_stack([t, np.zeros(12), np.zeros(12)])
    normals, valid = estimate_normals(pts, 4)
    assert not valid.any()
    assert np.isnan(normals[~valid]).all()


def test_unit_normal_invariant_enforced():
    with pytest.raises(DataError):
        PointCloud(np.zeros((2, 3)), np.array([[1.0, 0, 0], [0.5, 0, 0]]))


def test_trimesh_rejects_degenerate_faces():
    verts = np.eye(3)
    with pytest.raises(DataError):
        TriMesh(verts, np.array([[0, 0, 1]]))
    with pytest.raises(DataError):
        TriMesh(verts, np.array([[0, 1, 3]]))


def test_sample_mesh_surface_counts_and_position(rng):
    verts = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]])
    mesh = TriMesh(verts, np.array([[0, 1, 2]]))
    pts = sample_mesh_surface(mesh, 500, rng)
    assert pts.shape == (500, 3)
    assert np.abs(pts[:, 2]).max() == 0.0
    assert (pts[:, 0] >= -1e-12).all() and (pts[:, 1] >= -1e-12).all()
    assert (pts[:, 0] + pts[:, 1] <= 1 + 1e-12).all()


def test_obj_roundtrip(tmp_path, rng):
    verts = rng.normal(size=(10, 3))
    faces = np.array([[0, 1, 2], [3, 4, 5], [6, 7, 8]])
    path = tmp_path / "m.obj"
    write_obj(path, TriMesh(verts, faces))
    back = read_obj(path)
    assert np.array_equal(back.vertices, verts)  # repr round-trips floats
    assert np.array_equal(back.faces, faces)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 5))
def test_knn_value_oracle_property(seed, k):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(k + int(rng.integers(0, 10)), 3))
    p = rng.normal(size=3)
    assert knn_mean_sq_dist(p, pts, k) == pytest.approx(
        brute_force_knn_mean_sq(p, pts, k), abs=1e-10
    )
