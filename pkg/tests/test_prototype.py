import numpy as np
import pytest

from silcarve.camera import OrthoCamera
from silcarve.errors import DataError
from silcarve.prototype import (
    PrototypeCluster,
    PrototypeModel,
    cluster_instances,
    cone_tsdf,
    infer_dense_shape,
    kmeans,
    learn_prototype,
    view_weights,
)
from silcarve.rotations import exp_so3
from silcarve.silhouette import SilhouetteMask, sample_field, signed_boundary_field
from silcarve.synthetic import CameraLaw, make_shape, render_mask, sample_cameras
from silcarve.volume import TsdfVolume, cube_grid, occupancy


def circle_mask(w=64, h=64, cx=31.5, cy=31.5, r=20.0) -> SilhouetteMask:
    yy, xx = np.mgrid[0:h, 0:w]
    return SilhouetteMask((xx - cx) ** 2 + (yy - cy) ** 2 <= r * r)


# ---------------------------------------------------------------------------
# clustering


def test_kmeans_one_cluster_per_point(rng):
    pts = rng.normal(size=(6, 2))
    assign, centers = kmeans(pts, 6, seed=0)
    assert sorted(assign) == list(range(6))
    cost = ((pts - centers[assign]) ** 2).sum()
    assert cost == pytest.approx(0.0, abs=1e-24)


def test_kmeans_separated_blobs(rng):
    a = rng.normal(size=(12, 3)) * 0.1
    b = rng.normal(size=(9, 3)) * 0.1 + 10.0
    pts = np.vstack([a, b])
    assign, _ = kmeans(pts, 2, seed=3)
    assert len(set(assign[:12])) == 1
    assert len(set(assign[12:])) == 1
    assert assign[0] != assign[12]


def test_kmeans_deterministic(rng):
    pts = rng.normal(size=(30, 4))
    a1, c1 = kmeans(pts, 5, seed=42)
    a2, c2 = kmeans(pts, 5, seed=42)
    assert np.array_equal(a1, a2)
    assert np.array_equal(c1, c2)


def test_kmeans_locally_optimal_single_moves(rng):
    pts = rng.normal(size=(25, 2))
    k = 4
    assign, centers = kmeans(pts, k, seed=1)

    def cost_of(a):
        c = np.array([pts[a == j].mean(axis=0) if (a == j).any() else centers[j] for j in range(k)])
        return ((pts - c[a]) ** 2).sum()

    base = cost_of(assign)
    for i in range(len(pts)):
        for j in range(k):
            if j == assign[i] or (assign == assign[i]).sum() == 1:
                continue
            trial = assign.copy()
            trial[i] = j
            assert cost_of(trial) >= base - 1e-9


def test_kmeans_centroids_are_member_means(rng):
    pts = rng.normal(size=(40, 3))
    assign, centers = kmeans(pts, 3, seed=0)
    for j in range(3):
        assert np.allclose(centers[j], pts[assign == j].mean(axis=0))


def test_cluster_instances_validates_k(rng):
    with pytest.raises(DataError):
        cluster_instances(rng.normal(size=(3, 2)), 4)


def test_kmeans_cost_non_increasing(rng):
    pts = rng.normal(size=(60, 3))
    costs = []
    kmeans(pts, 4, seed=2, cost_log=costs)
    assert len(costs) >= 2
    assert all(b <= a + 1e-9 for a, b in zip(costs, costs[1:]))


# ---------------------------------------------------------------------------
# cone fields


def test_cone_full_foreground_all_at_min_trunc():
    grid = cube_grid(2.0, 8)
    mask = SilhouetteMask(np.ones((32, 32), dtype=bool))
    cam = OrthoCamera(10.0, np.eye(3), np.array([15.5, 15.5]))
    vol = cone_tsdf(mask, cam, grid, -0.25, np.inf)
    assert np.array_equal(vol.values, np.full(grid.dims, -0.25))


def test_cone_half_plane_linear_zero_crossing():
    occ = np.zeros((32, 32), dtype=bool)
    occ[:, 20:] = True
    cam = OrthoCamera(4.0, np.eye(3), np.array([16.0, 16.0]))
    grid = cube_grid(2.0, 17)
    vol = cone_tsdf(SilhouetteMask(occ), cam, grid, -10.0, np.inf)
    xs = grid.origin[0] + np.arange(17) * grid.voxel_size
    # signed world distance to the cone: (u0 - u)/scale = 1 - x
    expect = 1.0 - xs
    line = vol.values[:, 8, 8]
    keep = np.abs(expect) < 0.9  # stay clear of image borders
    assert np.abs(line[keep] - expect[keep]).max() < 1e-9


def test_cone_circular_mask_matches_cylinder():
    mask = circle_mask()
    cam = OrthoCamera(20.0, np.eye(3), np.array([31.5, 31.5]))
    grid = cube_grid(3.0, 32)
    vol = cone_tsdf(mask, cam, grid, -5.0, np.inf)
    c = grid.centers_grid()
    analytic = np.hypot(c[..., 0], c[..., 1]) - 1.0
    err = np.abs(vol.values - np.clip(analytic, -5.0, vol.max_trunc))
    assert err.max() < grid.voxel_size


def test_cone_rejects_offscreen_grid():
    mask = circle_mask()
    cam = OrthoCamera(1.0, np.eye(3), np.array([500.0, 500.0]))
    with pytest.raises(DataError, match="grid/camera"):
        cone_tsdf(mask, cam, cube_grid(2.0, 8), 0.0, np.inf)


def test_cone_values_respect_truncation(rng):
    mask = circle_mask()
    cam = OrthoCamera(20.0, np.eye(3), np.array([31.5, 31.5]))
    grid = cube_grid(3.0, 16)
    vol = cone_tsdf(mask, cam, grid, -0.05, 0.2)
    assert vol.values.min() >= -0.05 and vol.values.max() <= 0.2


# ---------------------------------------------------------------------------
# view weights


def make_cam(rot, scale=1.0):
    return OrthoCamera(scale, rot, np.zeros(2))


def test_view_weights_identical_cameras():
    cams = [make_cam(np.eye(3))] * 5
    assert np.allclose(view_weights(cams, 20.0), np.ones(5))


def test_view_weights_nine_vs_one():
    a = make_cam(np.eye(3))
    b = make_cam(exp_so3(np.array([np.pi / 2, 0.0, 0.0])))
    w = view_weights([a] * 9 + [b], 20.0)
    assert np.allclose(w[:9], 5.0 / 9.0)
    assert w[9] == pytest.approx(5.0)


def test_view_weights_zero_threshold_all_ones(rng):
    cams = [make_cam(np.eye(3))] * 4
    assert np.allclose(view_weights(cams, 0.0), np.ones(4))


# ---------------------------------------------------------------------------
# prototype learning / inference


@pytest.fixture(scope="module")
def sphere_members():
    sphere = make_shape("sphere", {"radius": 1.0}, 2)
    scale = 0.7 * 64 / sphere.bbox_diagonal()
    cams = sample_cameras(8, CameraLaw("uniform"), 5, scale=scale, translation=(31.5, 31.5))
    return [(render_mask(sphere, cam, 64, 64), cam) for cam in cams]


def test_single_member_equals_cone(sphere_members):
    mask, cam = sphere_members[0]
    grid = cube_grid(4.4, 24)
    acc = learn_prototype([(mask, cam)], [1.0], grid, 0.0, np.inf)
    cone = cone_tsdf(mask, cam, grid, 0.0, np.inf)
    assert np.array_equal(acc.values, cone.values)


def test_hull_equals_per_cone_intersection(sphere_members):
    grid = cube_grid(4.4, 24)
    acc = learn_prototype(sphere_members, np.ones(len(sphere_members)), grid, 0.0, np.inf)
    occ = occupancy(acc, 0.0)
    # per-voxel oracle: inside every cone, each tested independently on
    # the brute-force signed field of its own mask
    inside_all = np.ones(grid.dims, dtype=bool)
    pts = grid.centers_grid().reshape(-1, 3)
    for mask, cam in sphere_members:
        sd = sample_field(signed_boundary_field(mask), cam.project(pts)) / cam.scale
        inside_all &= (sd <= 0).reshape(grid.dims)
    assert np.array_equal(occ, inside_all)


def test_hull_monotone_in_members(sphere_members):
    grid = cube_grid(4.4, 20)
    prev = None
    for n in range(1, len(sphere_members) + 1):
        acc = learn_prototype(sphere_members[:n], np.ones(n), grid, 0.0, np.inf)
        occ = occupancy(acc, 0.0)
        if prev is not None:
            assert not (occ & ~prev).any()  # adding a cone never grows the hull
        prev = occ


def test_negative_truncation_gives_superset(sphere_members):
    grid = cube_grid(4.4, 20)
    occ0 = occupancy(learn_prototype(sphere_members, np.ones(8), grid, 0.0, np.inf))
    occ_neg = occupancy(
        learn_prototype(sphere_members, np.ones(8), grid, -2.0 * grid.voxel_size, np.inf)
    )
    assert (occ0 & ~occ_neg).sum() == 0


def test_learn_prototype_weight_mismatch(sphere_members):
    with pytest.raises(DataError):
        learn_prototype(sphere_members, np.ones(3), cube_grid(4.4, 8), 0.0, np.inf)


def _toy_model(grid, alphas):
    clusters = []
    for j, a in enumerate(alphas):
        vals = np.full(grid.dims, float(j + 1))
        vol = TsdfVolume(grid, vals, 0.0, float(j + 1))
        clusters.append(PrototypeCluster(vol, np.asarray(a, dtype=float), (f"i{j}", f"j{j}")))
    return PrototypeModel(tuple(clusters))


def test_infer_lambda_zero_is_own_cone(sphere_members):
    mask, cam = sphere_members[0]
    grid = cube_grid(4.4, 16)
    model = PrototypeModel(
        (
            PrototypeCluster(
                TsdfVolume(grid, np.ones(grid.dims), 0.0, 1.0), np.zeros(2), ("a",)
            ),
        ),
        blend_weight=0.0,
    )
    out = infer_dense_shape(mask, cam, np.zeros(2), model, 0.0, np.inf)
    cone = cone_tsdf(mask, cam, grid, 0.0, np.inf)
    assert np.array_equal(out.values, cone.values)


def test_infer_exact_alpha_selects_cluster(sphere_members):
    mask, cam = sphere_members[0]
    grid = cube_grid(4.4, 16)
    model = _toy_model(grid, [[0.0, 0.0], [5.0, 5.0], [9.0, 0.0]])
    out = infer_dense_shape(mask, cam, np.array([5.0, 5.0]), model, 0.0, np.inf)
    cone = cone_tsdf(mask, cam, grid, 0.0, np.inf)
    lam = 1.0 / model.clusters[1].count
    assert np.allclose(out.values, cone.values + lam * 2.0)


def test_infer_cluster_choice_permutation_invariant(sphere_members):
    mask, cam = sphere_members[0]
    grid = cube_grid(4.4, 16)
    model = _toy_model(grid, [[0.0, 0.0], [5.0, 5.0], [9.0, 0.0]])
    perm = PrototypeModel(tuple(model.clusters[::-1]), model.blend_weight)
    alpha = np.array([4.9, 4.9])
    a = infer_dense_shape(mask, cam, alpha, model, 0.0, np.inf)
    b = infer_dense_shape(mask, cam, alpha, perm, 0.0, np.inf)
    assert np.array_equal(a.values, b.values)


def test_infer_alpha_dimension_checked(sphere_members):
    mask, cam = sphere_members[0]
    model = _toy_model(cube_grid(4.4, 8), [[0.0, 0.0]])
    with pytest.raises(DataError):
        infer_dense_shape(mask, cam, np.zeros(3), model, 0.0, np.inf)


def test_infer_grid_mismatch_rejected(sphere_members):
    mask, cam = sphere_members[0]
    model = _toy_model(cube_grid(4.4, 8), [[0.0, 0.0]])
    other = cone_tsdf(mask, cam, cube_grid(4.4, 12), 0.0, np.inf)
    with pytest.raises(DataError, match="grid"):
        infer_dense_shape(mask, cam, np.zeros(2), model, 0.0, np.inf, instance_volume=other)


def test_infer_blend_beats_single_cone_carving():
    # ellipsoid family, coarse shape parameter = the (a, b) axes; a
    # held-out instance's single cone barely constrains depth, so
    # blending in the matching prototype must raise the occupancy IoU
    from silcarve.synthetic import SceneSpec, make_dataset

    spec = SceneSpec(
        family="ellipsoid",
        param_ranges={"a": (0.85, 1.2), "b": (0.85, 1.2), "c": (1.0, 1.0)},
        n_instances=17,
        image_size=(96, 96),
        seed=13,
        tessellation=2,
    )
    gts = make_dataset(spec)
    train, held = gts[:16], gts[16]
    alphas = np.array([[g.params["a"], g.params["b"]] for g in train])
    assign, centers = cluster_instances(alphas, 2, seed=0)
    grid = cube_grid(2.9, 48)
    clusters = []
    for j in range(2):
        idx = np.flatnonzero(assign == j)
        members = [(train[i].mask, train[i].camera) for i in idx]
        vol = learn_prototype(members, np.ones(len(idx)), grid, 0.0, np.inf)
        clusters.append(PrototypeCluster(vol, centers[j], tuple(str(i) for i in idx)))
    model = PrototypeModel(tuple(clusters))

    alpha_held = np.array([held.params["a"], held.params["b"]])
    blended = infer_dense_shape(held.mask, held.camera, alpha_held, model, 0.0, np.inf)
    cone_only = cone_tsdf(held.mask, held.camera, grid, 0.0, np.inf)
    cc = grid.centers_grid()
    truth = (
        (cc[..., 0] / held.params["a"]) ** 2
        + (cc[..., 1] / held.params["b"]) ** 2
        + (cc[..., 2] / held.params["c"]) ** 2
        <= 1.0
    )

    def iou(vol):
        occ = occupancy(vol, 0.0)
        return (occ & truth).sum() / (occ | truth).sum()

    assert iou(blended) >= iou(cone_only)
