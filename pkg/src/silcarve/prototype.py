"""Dense shape prototypes from silhouette cones.

Each training instance contributes a truncated signed distance field of
its visual cone (positive outside, negative inside). Instances are
grouped by their coarse deformation coefficients; summing the member
cone fields of a group yields its prototype. With a zero lower
truncation the prototype's zero sublevel set is the classical visual
hull of the group; a small negative lower truncation keeps voxels that
violate only a few silhouette constraints, which tolerates noisy
cameras and intra-group shape variation. Inference adds a scaled
prototype to the novel instance's own cone field.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .camera import OrthoCamera
from .errors import DataError
from .silhouette import SilhouetteMask, sample_field, signed_boundary_field
from .volume import GridSpec, TsdfVolume, resolve_max_trunc


@dataclass(frozen=True)
class PrototypeCluster:
    volume: TsdfVolume
    alpha: np.ndarray
    members: tuple

    @property
    def count(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class PrototypeModel:
    """Learned prototypes with their coefficient centroids.

    blend_weight None means "1 / member count of the selected cluster"
    at inference time.
    """

    clusters: tuple
    blend_weight: Optional[float] = None

    def __post_init__(self):
        if len(self.clusters) < 1:
            raise DataError("prototype model needs at least one cluster")
        grid = self.clusters[0].volume.grid
        dim = self.clusters[0].alpha.shape
        for c in self.clusters:
            if c.volume.grid != grid:
                raise DataError("prototype grids disagree")
            if c.alpha.shape != dim:
                raise DataError("coefficient centroids disagree in dimension")

    @property
    def grid(self) -> GridSpec:
        return self.clusters[0].volume.grid


def kmeans(points: np.ndarray, k: int, seed: int = 0, max_iters: int = 100, cost_log=None):
    """Deterministic k-means: distance-squared seeding, Lloyd iterations,
    then single-point moves until no reassignment lowers the cost.

    Empty clusters are re-seeded at the point farthest from its current
    centroid. Returns (assignments, centroids); per-iteration costs are
    appended to cost_log when given.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = pts.shape[0]
    if k < 1 or k > n:
        raise DataError(f"cluster count must be in [1, {n}], got {k}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))

    centers = _plusplus_seed(pts, k, rng)
    assign = np.zeros(n, dtype=int)
    for _ in range(max_iters):
        d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.argmin(d2, axis=1)
        for j in range(k):
            members = new_assign == j
            if members.any():
                centers[j] = pts[members].mean(axis=0)
            else:
                worst = int(np.argmax(d2[np.arange(n), new_assign]))
                centers[j] = pts[worst]
                new_assign[worst] = j
        if cost_log is not None:
            cost_log.append(float(((pts - centers[new_assign]) ** 2).sum()))
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign

    _polish_single_moves(pts, assign, centers, k, max_iters)
    if cost_log is not None:
        cost_log.append(float(((pts - centers[assign]) ** 2).sum()))
    return assign, centers


def _plusplus_seed(pts: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = pts.shape[0]
    chosen = [int(rng.integers(n))]
    for _ in range(k - 1):
        d2 = ((pts[:, None, :] - pts[chosen][None, :, :]) ** 2).sum(axis=2).min(axis=1)
        total = d2.sum()
        if total <= 0:
            # all remaining points coincide with chosen seeds: take the
            # first unchosen index
            rest = [i for i in range(n) if i not in chosen]
            chosen.append(rest[0])
            continue
        chosen.append(int(rng.choice(n, p=d2 / total)))
    return pts[chosen].astype(float).copy()


def _polish_single_moves(pts, assign, centers, k, max_rounds) -> None:
    """Hartigan-style pass: move one point if that strictly lowers the
    total cost with centroids recomputed."""
    n = pts.shape[0]

    def total_cost():
        return float(((pts - centers[assign]) ** 2).sum())

    for _ in range(max_rounds):
        moved = False
        for i in range(n):
            src = assign[i]
            if (assign == src).sum() == 1:
                continue  # moving would empty the cluster
            best_cost = total_cost()
            best_dst = src
            for dst in range(k):
                if dst == src:
                    continue
                assign[i] = dst
                _recompute(pts, assign, centers, (src, dst))
                cost = total_cost()
                if cost < best_cost - 1e-12:
                    best_cost = cost
                    best_dst = dst
                assign[i] = src
                _recompute(pts, assign, centers, (src, dst))
            if best_dst != src:
                assign[i] = best_dst
                _recompute(pts, assign, centers, (src, best_dst))
                moved = True
        if not moved:
            break


def _recompute(pts, assign, centers, which) -> None:
    for j in which:
        members = assign == j
        if members.any():
            centers[j] = pts[members].mean(axis=0)


def cluster_instances(alphas, k: int, seed: int = 0):
    """Group deformation-coefficient vectors into k visual clusters."""
    arr = np.atleast_2d(np.asarray(alphas, dtype=float))
    return kmeans(arr, k, seed)


def cone_tsdf(
    mask: SilhouetteMask,
    cam: OrthoCamera,
    grid: GridSpec,
    min_trunc: float,
    max_trunc: float,
) -> TsdfVolume:
    """Truncated signed distance to the instance's visual cone.

    Each voxel center projects into the image; its value is the signed
    boundary distance there (pixels divided by the camera scale, so
    world units), clamped to [min_trunc, max_trunc]. Positive outside
    the silhouette, negative inside. Under orthographic projection this
    is the 3D signed distance to the cone along image-plane directions.
    """
    if not min_trunc <= 0 < max_trunc:
        raise DataError("need min_trunc <= 0 < max_trunc")
    hi = resolve_max_trunc(max_trunc, grid)
    centers = grid.centers_grid().reshape(-1, 3)
    uv = cam.project(centers)
    in_image = (
        (uv[:, 0] >= 0)
        & (uv[:, 0] <= mask.width - 1)
        & (uv[:, 1] >= 0)
        & (uv[:, 1] <= mask.height - 1)
    )
    if not in_image.any():
        raise DataError("grid/camera mismatch: projected grid entirely outside image")
    signed_px = sample_field(signed_boundary_field(mask), uv)
    values = np.clip(signed_px / cam.scale, min_trunc, hi).reshape(grid.dims)
    return TsdfVolume(grid, values, float(min_trunc), hi)


def view_weights(cams: list, angular_threshold_deg: float = 20.0) -> np.ndarray:
    """Per-instance weights that counter a biased view distribution.

    Viewing directions are grouped greedily: a camera joins the first
    group whose seed direction is strictly within the threshold,
    otherwise it opens a new group. Each instance gets 1/|group|,
    rescaled so the weights sum to the number of instances.
    """
    if len(cams) == 0:
        raise DataError("need at least one camera")
    dirs = np.array([c.view_direction for c in cams])
    seeds: list = []
    member_of = np.empty(len(cams), dtype=int)
    counts: list = []
    for i, d in enumerate(dirs):
        placed = False
        for j, s in enumerate(seeds):
            cosang = float(np.clip(d @ s, -1.0, 1.0))
            if np.arccos(cosang) < np.deg2rad(angular_threshold_deg):
                member_of[i] = j
                counts[j] += 1
                placed = True
                break
        if not placed:
            member_of[i] = len(seeds)
            seeds.append(d)
            counts.append(1)
    raw = 1.0 / np.array(counts, dtype=float)[member_of]
    return raw * (len(cams) / raw.sum())


def learn_prototype(
    members: list,
    weights,
    grid: GridSpec,
    min_trunc: float,
    max_trunc: float,
) -> TsdfVolume:
    """Weighted sum of member cone fields on a shared grid.

    With min_trunc = 0 and unit weights the zero sublevel set is the
    intersection of the member cones (the visual hull). The stored
    truncation bounds widen to the weighted sums of the member bounds.
    """
    if not members:
        raise DataError("prototype needs at least one member")
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (len(members),):
        raise DataError("weights must match members")
    hi = resolve_max_trunc(max_trunc, grid)
    acc = np.zeros(grid.dims)
    for (mask, cam), w in zip(members, weights):
        acc += w * cone_tsdf(mask, cam, grid, min_trunc, max_trunc).values
    wsum = float(weights.sum())
    return TsdfVolume(grid, acc, wsum * float(min_trunc), wsum * hi)


def infer_dense_shape(
    mask: SilhouetteMask,
    cam: OrthoCamera,
    alpha: np.ndarray,
    model: PrototypeModel,
    min_trunc: float,
    max_trunc: float,
    instance_volume: Optional[TsdfVolume] = None,
) -> TsdfVolume:
    """Blend the instance's own cone field with its nearest prototype.

    The cluster whose coefficient centroid is closest to alpha (ties to
    the lowest index) contributes blend_weight times its prototype.
    """
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    if alpha.shape != model.clusters[0].alpha.shape:
        raise DataError("alpha dimension does not match the model")
    dists = np.array([np.linalg.norm(alpha - c.alpha) for c in model.clusters])
    j = int(np.argmin(dists))
    chosen = model.clusters[j]
    lam = model.blend_weight if model.blend_weight is not None else 1.0 / chosen.count

    if instance_volume is None:
        instance_volume = cone_tsdf(mask, cam, model.grid, min_trunc, max_trunc)
    elif instance_volume.grid != model.grid:
        raise DataError("instance volume grid does not match prototype grid")
    values = instance_volume.values + lam * chosen.volume.values
    lo = instance_volume.min_trunc + lam * chosen.volume.min_trunc
    hi = instance_volume.max_trunc + lam * chosen.volume.max_trunc
    return TsdfVolume(model.grid, values, lo, hi)
