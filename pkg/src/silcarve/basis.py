"""Deformable point-cloud shape models learned from silhouettes.

A model is a mean cloud plus a small set of deformation bases with
constant Frobenius norm; an instance shape is the mean plus a linear
combination of the bases. Learning alternates normalized subgradient
steps on (mean, bases) with closed-form per-instance coefficient
updates, under five energies:

  silhouette consistency  squared distance to the nearest boundary
                          point for projections outside the mask
  silhouette coverage     mean squared distance from each boundary
                          point to its m nearest projected points
  keypoint consistency    mean squared distance from lifted 3D
                          keypoints to their m nearest shape points
  local rigidity          neighbor distances near a target spacing,
                          neighbor basis vectors near each other
  normal smoothness       1 - dot of neighboring plane-fit normals

Image-space terms are truncated per point at (trunc_frac * image
diagonal)^2 so outlier silhouette regions cannot dominate. Nearest
neighbor sets are recomputed once per outer iteration and frozen within
the inner steps, which keeps the inner objectives piecewise smooth.

The normal-smoothness value is reported exactly but is descended with a
surrogate (each point attracted to its local fitted plane); it is
excluded from the analytic gradients this module exposes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .camera import OrthoCamera
from .cloud import PointCloud, knn_indices, plane_fit_normals, sample_mesh_surface
from .errors import DataError, NumericalError
from .instance import Instance
from .prototype import learn_prototype
from .rotations import complete_rotation, exp_so3, nearest_scaled_rows, skew
from .volume import GridSpec, cube_grid, extract_isosurface

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BasisConfig:
    n_points: int = 1500
    m_cover: int = 4
    neighbor_k: int = 6
    normal_fit_k: int = 8
    w_sil: float = 1.0
    w_cover: float = 1.0
    w_keypoint: float = 1.0
    w_local: float = 0.5
    w_normal: float = 0.1
    w_reg: float = 0.01
    basis_norm: float = 1.0
    outer_iters: int = 40
    inner_steps: int = 4
    step0_frac: float = 1e-2
    step_tau: float = 50.0
    trunc_frac: float = 0.1
    grid_resolution: int = 64
    grid_margin: float = 2.2
    soft_trunc_voxels: float = 0.25
    rel_tol: float = 1e-5
    divergence_factor: float = 10.0
    alpha_init_scale: float = 1e-2
    seed: int = 0


@dataclass(frozen=True)
class FitConfig:
    m_cover: int = 4
    w_sil: float = 1.0
    w_cover: float = 1.0
    w_normal: float = 0.1
    w_reg: float = 0.01
    normal_fit_k: int = 8
    trunc_frac: float = 0.1
    outer_iters: int = 25
    camera_steps: int = 4
    fit_scale: bool = True
    fit_rotation: bool = True
    fit_translation: bool = True
    rel_tol: float = 1e-5


@dataclass(frozen=True)
class BasisShapeModel:
    """Mean cloud, deformation bases, and the fixed neighbor graph."""

    mean: np.ndarray  # (N, 3)
    bases: np.ndarray  # (K, N, 3)
    basis_norm: float
    delta: float
    neighbors: tuple  # tuple of per-point neighbor index tuples

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        bases = np.asarray(self.bases, dtype=float)
        if bases.ndim != 3 or bases.shape[1:] != mean.shape:
            raise DataError("bases must be (K, N, 3) matching the mean")
        for k in range(bases.shape[0]):
            norm = np.linalg.norm(bases[k])
            if abs(norm - self.basis_norm) > 1e-6:
                raise DataError(f"basis {k} norm {norm} != {self.basis_norm}")
        neighbors = tuple(tuple(int(j) for j in row) for row in self.neighbors)
        if len(neighbors) != mean.shape[0]:
            raise DataError("neighbor graph size mismatch")
        for i, row in enumerate(neighbors):
            for j in row:
                if i not in neighbors[j]:
                    raise DataError("neighbor graph is not symmetric-closed")
        mean.flags.writeable = False
        bases.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "bases", bases)
        object.__setattr__(self, "neighbors", neighbors)

    @property
    def n_points(self) -> int:
        return self.mean.shape[0]

    @property
    def n_bases(self) -> int:
        return self.bases.shape[0]

    @property
    def edges(self) -> np.ndarray:
        """(E, 2) directed edge list of the neighbor graph."""
        return np.array(
            [(i, j) for i, row in enumerate(self.neighbors) for j in row], dtype=np.intp
        ).reshape(-1, 2)

    def shape_for(self, alpha: np.ndarray) -> np.ndarray:
        alpha = np.asarray(alpha, dtype=float).reshape(-1)
        if alpha.shape[0] != self.n_bases:
            raise DataError("alpha dimension mismatch")
        return self.mean + np.einsum("k,knj->nj", alpha, self.bases)

    def diameter(self) -> float:
        ext = self.mean.max(axis=0) - self.mean.min(axis=0)
        return float(np.linalg.norm(ext))


@dataclass(frozen=True)
class InstanceFit:
    """Result of fitting coefficients (and camera) to one silhouette."""

    alpha: np.ndarray
    camera: OrthoCamera
    model: BasisShapeModel
    energy: dict

    @property
    def shape(self) -> np.ndarray:
        return self.model.shape_for(self.alpha)


def image_cap(instance: Instance, trunc_frac: float) -> float:
    """Per-point truncation for image-space terms, in squared pixels."""
    mask = instance._require_mask()
    diag = float(np.hypot(mask.width, mask.height))
    return (trunc_frac * diag) ** 2


# ---------------------------------------------------------------------------
# Energy terms (fresh correspondences; each returns energy + subgradient)


def silhouette_consistency(points: np.ndarray, instance: Instance, cap: float = np.inf):
    """Sum of squared distances to the nearest boundary point, over
    projected points with positive Chamfer value. Gradient flows through
    the projection to the 3D points; capped terms contribute slope 0."""
    cam = _need_camera(instance)
    uv = cam.project(points)
    frozen = _freeze_sil(uv, instance, cap)
    e, grad_uv = _eval_sil(uv, frozen, cap)
    return e, grad_uv @ cam.projection_rows


def silhouette_coverage(points: np.ndarray, instance: Instance, m: int, cap: float = np.inf):
    """Mean squared distance from each boundary point to its m nearest
    projected shape points, truncated per boundary point."""
    if len(points) < m:
        raise DataError("need at least m shape points")
    cam = _need_camera(instance)
    uv = cam.project(points)
    frozen = _freeze_cov(uv, instance, m, cap)
    e, grad_uv = _eval_cov(uv, frozen, cap)
    return e, grad_uv @ cam.projection_rows


def keypoint_consistency(points: np.ndarray, keypoints3d: np.ndarray, m: int, cap: float = np.inf):
    """Mean squared distance from each 3D keypoint to its m nearest
    shape points (world units)."""
    kp = np.atleast_2d(np.asarray(keypoints3d, dtype=float))
    frozen = _freeze_kp(points, kp, m, cap)
    return _eval_kp(points, frozen, cap)


def local_rigidity(mean: np.ndarray, bases: np.ndarray, edges: np.ndarray, delta: float):
    """Quadratic spacing penalty plus basis-smoothness penalty over
    directed neighbor edges. Returns (energy, grad_mean, grad_bases)."""
    e0, e1 = edges[:, 0], edges[:, 1]
    d = mean[e0] - mean[e1]
    lengths = np.linalg.norm(d, axis=1)
    energy = float(((lengths - delta) ** 2).sum())
    grad_mean = np.zeros_like(mean)
    safe = lengths > 1e-12  # subgradient 0 at coincident neighbors
    coef = np.zeros_like(lengths)
    coef[safe] = 2.0 * (lengths[safe] - delta) / lengths[safe]
    contrib = coef[:, None] * d
    np.add.at(grad_mean, e0, contrib)
    np.add.at(grad_mean, e1, -contrib)
    grad_bases = np.zeros_like(bases)
    for k in range(bases.shape[0]):
        dv = bases[k, e0] - bases[k, e1]
        energy += float((dv**2).sum())
        np.add.at(grad_bases[k], e0, 2.0 * dv)
        np.add.at(grad_bases[k], e1, -2.0 * dv)
    return energy, grad_mean, grad_bases


def normal_smoothness(points: np.ndarray, fit_k: int, edges: Optional[np.ndarray] = None):
    """Variation of plane-fit normal directions across neighbor pairs.

    Returns (energy, surrogate_force, valid): the energy is exact; the
    force attracts each point to its local fitted plane and serves as
    the descent direction since the energy is not differentiated.
    Pairs with an invalid normal are excluded.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if edges is None:
        edges = _symmetric_knn_edges(pts, fit_k)
    normals, valid, centroids = plane_fit_normals(pts, fit_k, oriented=True)
    e0, e1 = edges[:, 0], edges[:, 1]
    ok = valid[e0] & valid[e1]
    energy = float((1.0 - np.einsum("ij,ij->i", normals[e0[ok]], normals[e1[ok]])).sum())
    force = np.zeros_like(pts)
    offset = np.einsum("ij,ij->i", pts[valid] - centroids[valid], normals[valid])
    force[valid] = -offset[:, None] * normals[valid]
    return energy, force, valid


def _symmetric_knn_edges(points: np.ndarray, k: int) -> np.ndarray:
    nn = knn_indices(points, points, min(k + 1, len(points)))[:, 1:]
    adj = [set() for _ in range(len(points))]
    for i, row in enumerate(nn):
        for j in row:
            adj[i].add(int(j))
            adj[int(j)].add(i)
    return np.array(
        [(i, j) for i, s in enumerate(adj) for j in sorted(s)], dtype=np.intp
    ).reshape(-1, 2)


def _need_camera(instance: Instance) -> OrthoCamera:
    if instance.camera is None:
        raise DataError(f"instance {instance.instance_id!r} has no camera")
    return instance.camera


# ---------------------------------------------------------------------------
# Frozen-correspondence machinery shared by the ops and the optimizers


@dataclass
class _FrozenSil:
    active_idx: np.ndarray  # point indices with positive Chamfer value
    targets: np.ndarray  # nearest boundary point per active index


@dataclass
class _FrozenCov:
    boundary: np.ndarray  # (B, 2)
    nn_idx: np.ndarray  # (B, m) projected point indices


@dataclass
class _FrozenKp:
    keypoints: np.ndarray  # (Q, 3)
    nn_idx: np.ndarray  # (Q, m) shape point indices


def _freeze_sil(uv: np.ndarray, instance: Instance, cap: float) -> _FrozenSil:
    boundary = instance.boundary
    chamfer = instance.chamfer.sample(uv)
    active = np.flatnonzero(chamfer > 0.0)
    if boundary.shape[0] == 0:
        active = active[:0]
    if active.size:
        nearest = knn_indices(uv[active], boundary, 1)[:, 0]
        targets = boundary[nearest]
    else:
        targets = np.zeros((0, 2))
    return _FrozenSil(active, targets)


def _eval_sil(uv: np.ndarray, frozen: _FrozenSil, cap: float):
    grad_uv = np.zeros_like(uv)
    if frozen.active_idx.size == 0:
        return 0.0, grad_uv
    diff = uv[frozen.active_idx] - frozen.targets
    d2 = (diff**2).sum(axis=1)
    capped = d2 >= cap
    energy = float(np.minimum(d2, cap).sum())
    live = frozen.active_idx[~capped]
    grad_uv[live] = 2.0 * diff[~capped]
    return energy, grad_uv


def _freeze_cov(uv: np.ndarray, instance: Instance, m: int, cap: float) -> _FrozenCov:
    boundary = instance.boundary
    if uv.shape[0] < m:
        raise DataError("need at least m shape points")
    nn = knn_indices(boundary, uv, m) if boundary.shape[0] else np.zeros((0, m), np.intp)
    return _FrozenCov(boundary, nn)


def _eval_cov(uv: np.ndarray, frozen: _FrozenCov, cap: float):
    grad_uv = np.zeros_like(uv)
    if frozen.boundary.shape[0] == 0:
        return 0.0, grad_uv
    m = frozen.nn_idx.shape[1]
    q = uv[frozen.nn_idx]  # (B, m, 2)
    diff = q - frozen.boundary[:, None, :]
    t = (diff**2).sum(axis=2).mean(axis=1)
    capped = t >= cap
    energy = float(np.minimum(t, cap).sum())
    live = ~capped
    np.add.at(grad_uv, frozen.nn_idx[live].ravel(), (2.0 / m) * diff[live].reshape(-1, 2))
    return energy, grad_uv


def _freeze_kp(points: np.ndarray, keypoints: np.ndarray, m: int, cap: float) -> _FrozenKp:
    if points.shape[0] < m:
        raise DataError("need at least m shape points")
    nn = knn_indices(keypoints, points, m)
    return _FrozenKp(keypoints, nn)


def _eval_kp(points: np.ndarray, frozen: _FrozenKp, cap: float):
    grad = np.zeros_like(points)
    if frozen.keypoints.shape[0] == 0:
        return 0.0, grad
    m = frozen.nn_idx.shape[1]
    q = points[frozen.nn_idx]  # (Q, m, 3)
    diff = q - frozen.keypoints[:, None, :]
    t = (diff**2).sum(axis=2).mean(axis=1)
    capped = t >= cap
    energy = float(np.minimum(t, cap).sum())
    live = ~capped
    np.add.at(grad, frozen.nn_idx[live].ravel(), (2.0 / m) * diff[live].reshape(-1, 3))
    return energy, grad


@dataclass
class _FrozenInstance:
    sil: _FrozenSil
    cov: _FrozenCov
    kp: Optional[_FrozenKp]
    cap_img: float
    cap_world: float
    normal_energy: float
    normal_force: np.ndarray


def _freeze_instance(shape, instance, config, edges) -> _FrozenInstance:
    cam = _need_camera(instance)
    uv = cam.project(shape)
    cap_img = image_cap(instance, config.trunc_frac)
    cap_world = cap_img / (cam.scale**2)
    sil = _freeze_sil(uv, instance, cap_img)
    cov = _freeze_cov(uv, instance, config.m_cover, cap_img)
    kp = None
    if instance.keypoints3d is not None and getattr(config, "w_keypoint", 0.0) > 0:
        kp = _freeze_kp(shape, np.asarray(instance.keypoints3d, float), config.m_cover, cap_world)
    if config.w_normal > 0:
        n_energy, n_force, _ = normal_smoothness(shape, config.normal_fit_k, edges)
    else:
        n_energy, n_force = 0.0, np.zeros_like(shape)
    return _FrozenInstance(sil, cov, kp, cap_img, cap_world, n_energy, n_force)


def _eval_instance_terms(shape, instance, frozen, config, img_weight):
    """Weighted data energy and its gradient wrt the instance shape,
    under frozen correspondences. The normal term enters the energy at
    its frozen value; its surrogate force is returned separately."""
    cam = instance.camera
    uv = cam.project(shape)
    e_sil, g_sil_uv = _eval_sil(uv, frozen.sil, frozen.cap_img)
    e_cov, g_cov_uv = _eval_cov(uv, frozen.cov, frozen.cap_img)
    grad_uv = (config.w_sil * g_sil_uv + config.w_cover * g_cov_uv) * img_weight
    grad = grad_uv @ cam.projection_rows
    energy = img_weight * (config.w_sil * e_sil + config.w_cover * e_cov)
    breakdown = {
        "sil": img_weight * config.w_sil * e_sil,
        "cover": img_weight * config.w_cover * e_cov,
        "keypoint": 0.0,
        "normal": config.w_normal * frozen.normal_energy,
    }
    if frozen.kp is not None:
        e_kp, g_kp = _eval_kp(shape, frozen.kp, frozen.cap_world)
        energy += config.w_keypoint * e_kp
        grad = grad + config.w_keypoint * g_kp
        breakdown["keypoint"] = config.w_keypoint * e_kp
    energy += breakdown["normal"]
    return energy, grad, breakdown


# ---------------------------------------------------------------------------
# Total energy (fresh correspondences) with analytic block gradients


def total_energy(model: BasisShapeModel, alphas: np.ndarray, instances: list, config: BasisConfig):
    """Full training energy and its subgradients wrt mean, bases, alpha.

    The normal-smoothness value is included in the total (weighted) but
    carries no analytic gradient here; all other terms are exact.
    Returns (total, grads dict, breakdown dict).
    """
    alphas = np.atleast_2d(np.asarray(alphas, dtype=float))
    if alphas.shape != (len(instances), model.n_bases):
        raise DataError("alphas must be (n_instances, n_bases)")
    edges = model.edges
    g_mean = np.zeros_like(model.mean)
    g_bases = np.zeros_like(model.bases)
    g_alpha = np.zeros_like(alphas)
    breakdown = {"sil": 0.0, "cover": 0.0, "keypoint": 0.0, "normal": 0.0, "local": 0.0, "reg": 0.0}
    total = 0.0
    for i, inst in enumerate(instances):
        shape = model.shape_for(alphas[i])
        frozen = _freeze_instance(shape, inst, config, edges)
        e, grad_s, bd = _eval_instance_terms(shape, inst, frozen, config, img_weight=1.0)
        total += e
        for key in ("sil", "cover", "keypoint", "normal"):
            breakdown[key] += bd[key]
        g_mean += grad_s
        g_bases += alphas[i][:, None, None] * grad_s[None]
        g_alpha[i] = np.einsum("nj,knj->k", grad_s, model.bases)

    e_local, gm_local, gb_local = local_rigidity(model.mean, model.bases, edges, model.delta)
    total += config.w_local * e_local
    breakdown["local"] = config.w_local * e_local
    g_mean += config.w_local * gm_local
    g_bases += config.w_local * gb_local

    sq_norms = np.array([float((model.bases[k] ** 2).sum()) for k in range(model.n_bases)])
    e_reg = float((alphas**2 @ sq_norms).sum())
    total += config.w_reg * e_reg
    breakdown["reg"] = config.w_reg * e_reg
    g_alpha += config.w_reg * 2.0 * alphas * sq_norms[None, :]

    return total, {"mean": g_mean, "bases": g_bases, "alpha": g_alpha}, breakdown


# ---------------------------------------------------------------------------
# Initialization


def grid_from_instances(instances: list, resolution: int, margin: float) -> GridSpec:
    """Cube grid around the origin sized from projected mask extents."""
    diam = 0.0
    for inst in instances:
        mask = inst._require_mask()
        cam = _need_camera(inst)
        ys, xs = np.nonzero(mask.occupancy)
        ext = np.hypot(xs.max() - xs.min() + 1, ys.max() - ys.min() + 1)
        diam = max(diam, float(ext) / cam.scale)
    if diam <= 0:
        raise DataError("cannot size a grid from empty masks")
    return cube_grid(margin * diam, resolution)


def soft_visual_hull_init(
    instances: list,
    grid: GridSpec,
    n_points: int,
    seed: int = 0,
    soft_trunc_voxels: float = 0.25,
) -> PointCloud:
    """Initial mean cloud: accumulate cone fields of all instances with a
    small negative lower truncation, extract the zero isosurface, sample
    it uniformly by area.

    Falls back to the 5th-percentile level when the zero set is empty.
    """
    if not instances:
        raise DataError("need at least one instance")
    members = [(inst._require_mask(), _need_camera(inst)) for inst in instances]
    lo = -abs(soft_trunc_voxels) * grid.voxel_size
    acc = learn_prototype(members, np.ones(len(members)), grid, lo, np.inf)
    mesh = extract_isosurface(acc, 0.0)
    if mesh.is_empty:
        level = float(np.percentile(acc.values, 5.0))
        log.warning("empty isosurface at level 0; falling back to level %.4g", level)
        mesh = extract_isosurface(acc, level)
        if mesh.is_empty:
            raise DataError("soft visual hull has no extractable surface")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(0,))))
    return PointCloud(sample_mesh_surface(mesh, n_points, rng))


def _build_neighbor_graph(points: np.ndarray, k: int) -> tuple:
    nn = knn_indices(points, points, min(k + 1, len(points)))[:, 1:]
    adj = [set() for _ in range(len(points))]
    for i, row in enumerate(nn):
        for j in row:
            adj[i].add(int(j))
            adj[int(j)].add(i)
    return tuple(tuple(sorted(s)) for s in adj)


# ---------------------------------------------------------------------------
# Learning


def learn_basis(instances: list, n_bases: int, config: Optional[BasisConfig] = None, seed: Optional[int] = None):
    """Learn a deformable shape model from silhouettes and cameras.

    Block-coordinate descent: normalized subgradient steps on the mean
    and bases (each basis renormalized to constant Frobenius norm after
    every update, coefficients rescaled to compensate), then closed-form
    per-instance coefficient updates on the frozen correspondence sets.
    Image-space term weights are divided by the squared mean camera
    scale so all terms compare in world units.

    Returns (model, alphas, history); history holds per-outer-iteration
    weighted term energies.
    """
    config = config or BasisConfig()
    if seed is not None:
        config = replace(config, seed=seed)
    if len(instances) < 2:
        raise DataError("need at least two instances")
    if n_bases < 0:
        raise DataError("basis count must be >= 0")

    grid = grid_from_instances(instances, config.grid_resolution, config.grid_margin)
    init_cloud = soft_visual_hull_init(
        instances, grid, config.n_points, config.seed, config.soft_trunc_voxels
    )
    mean = init_cloud.points.copy()
    neighbors = _build_neighbor_graph(mean, config.neighbor_k)
    edges = np.array([(i, j) for i, row in enumerate(neighbors) for j in row], dtype=np.intp)
    delta = float(np.sqrt(((mean[edges[:, 0]] - mean[edges[:, 1]]) ** 2).sum(axis=1).mean()))
    diam = float(np.linalg.norm(mean.max(axis=0) - mean.min(axis=0)))

    rng_v = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed, spawn_key=(1,))))
    bases = rng_v.normal(0.0, 1e-2, size=(n_bases, len(mean), 3))
    for k in range(n_bases):
        bases[k] *= config.basis_norm / max(np.linalg.norm(bases[k]), 1e-30)
    rng_a = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed, spawn_key=(2,))))
    alphas = rng_a.normal(0.0, config.alpha_init_scale, size=(len(instances), n_bases))

    mean_scale = float(np.mean([_need_camera(inst).scale for inst in instances]))
    img_weight = 1.0 / (mean_scale**2)

    history = []
    model0 = BasisShapeModel(mean.copy(), bases.copy(), config.basis_norm, delta, neighbors)
    initial_total, _, _ = total_energy(
        model0, alphas, instances, config_scaled(config, img_weight)
    )
    initial_total = max(initial_total, 1e-12)
    prev_total = None
    for t in range(config.outer_iters):
        eta = (config.step0_frac * diam) / (1.0 + t / config.step_tau)
        eta_v = (config.step0_frac * config.basis_norm) / (1.0 + t / config.step_tau)

        shapes = [mean + np.einsum("k,knj->nj", alphas[i], bases) for i in range(len(instances))]
        frozen = [
            _freeze_instance(shapes[i], instances[i], config, edges)
            for i in range(len(instances))
        ]

        for _ in range(config.inner_steps):
            g_mean = np.zeros_like(mean)
            g_bases = np.zeros_like(bases) if n_bases else np.zeros((0, len(mean), 3))
            f_mean = np.zeros_like(mean)
            f_bases = np.zeros_like(g_bases)
            for i, inst in enumerate(instances):
                shape_i = mean + np.einsum("k,knj->nj", alphas[i], bases)
                _, grad_s, _ = _eval_instance_terms(shape_i, inst, frozen[i], config, img_weight)
                g_mean += grad_s
                if n_bases:
                    g_bases += alphas[i][:, None, None] * grad_s[None]
                f_mean += frozen[i].normal_force
                if n_bases:
                    f_bases += alphas[i][:, None, None] * frozen[i].normal_force[None]
            _, gm_local, gb_local = local_rigidity(mean, bases, edges, delta)
            g_mean += config.w_local * gm_local
            if n_bases:
                g_bases += config.w_local * gb_local

            mean = mean - eta * _unit_max(g_mean) + eta * config.w_normal * _unit_max(f_mean)
            if n_bases:
                step = eta_v * _unit_max(g_bases) - eta_v * config.w_normal * _unit_max(f_bases)
                bases = bases - step
                for k in range(n_bases):
                    norm = np.linalg.norm(bases[k])
                    if norm < 1e-30:
                        continue
                    bases[k] *= config.basis_norm / norm
                    alphas[:, k] *= norm / config.basis_norm

        if n_bases:
            for i, inst in enumerate(instances):
                alphas[i] = _solve_alpha(mean, bases, inst, frozen[i], alphas[i], config, img_weight)

        model_t = BasisShapeModel(mean.copy(), bases.copy(), config.basis_norm, delta, neighbors)
        total, _, bd = total_energy(model_t, alphas, instances, config_scaled(config, img_weight))
        history.append({"iteration": t, "total": total, **bd})
        if not np.isfinite(total):
            raise NumericalError("non-finite training energy")
        if total > config.divergence_factor * initial_total:
            raise NumericalError("step size too large (energy diverged)")
        if prev_total is not None and abs(prev_total - total) <= config.rel_tol * max(prev_total, 1e-12):
            break
        prev_total = total

    model = BasisShapeModel(mean, bases, config.basis_norm, delta, neighbors)
    return model, alphas, history


def config_scaled(config: BasisConfig, img_weight: float) -> BasisConfig:
    """Config with image-space weights folded down to world units."""
    return replace(
        config, w_sil=config.w_sil * img_weight, w_cover=config.w_cover * img_weight
    )


def _unit_max(g: np.ndarray) -> np.ndarray:
    """Normalize so the largest per-point step has unit length."""
    if g.size == 0:
        return g
    norms = np.sqrt((g**2).sum(axis=-1))
    top = norms.max()
    if top < 1e-30:
        return np.zeros_like(g)
    return g / top


def _solve_alpha(mean, bases, instance, frozen, alpha_now, config, img_weight):
    """Closed-form ridge update of one instance's coefficients on the
    frozen correspondence sets, keeping whichever of old/new has lower
    frozen energy (caps can shift the active regions)."""
    cam = instance.camera
    g = cam.projection_rows
    n_bases = bases.shape[0]
    base_uv = mean @ g.T + cam.translation
    vg = np.einsum("knj,ij->kni", bases, g)  # (K, N, 2)

    rows = []
    targets = []
    shape_now = mean + np.einsum("k,knj->nj", alpha_now, bases)
    uv_now = cam.project(shape_now)

    if frozen.sil.active_idx.size and config.w_sil > 0:
        d2 = ((uv_now[frozen.sil.active_idx] - frozen.sil.targets) ** 2).sum(axis=1)
        live = frozen.sil.active_idx[d2 < frozen.cap_img]
        targets_live = frozen.sil.targets[d2 < frozen.cap_img]
        w = np.sqrt(config.w_sil * img_weight)
        if live.size:
            rows.append(w * vg[:, live, :].reshape(n_bases, -1).T)
            targets.append(w * (targets_live - base_uv[live]).reshape(-1))
    if frozen.cov.boundary.shape[0] and config.w_cover > 0:
        m = frozen.cov.nn_idx.shape[1]
        t_now = ((uv_now[frozen.cov.nn_idx] - frozen.cov.boundary[:, None, :]) ** 2).sum(
            axis=2
        ).mean(axis=1)
        live_b = t_now < frozen.cap_img
        idx = frozen.cov.nn_idx[live_b]
        bnd = frozen.cov.boundary[live_b]
        w = np.sqrt(config.w_cover * img_weight / m)
        if idx.size:
            rows.append(w * vg[:, idx.ravel(), :].reshape(n_bases, -1).T)
            targets.append(
                w * (np.repeat(bnd, m, axis=0) - base_uv[idx.ravel()]).reshape(-1)
            )
    if frozen.kp is not None and config.w_keypoint > 0:
        shape_pts_now = shape_now[frozen.kp.nn_idx]
        t_now = ((shape_pts_now - frozen.kp.keypoints[:, None, :]) ** 2).sum(axis=2).mean(axis=1)
        live_q = t_now < frozen.cap_world
        m = frozen.kp.nn_idx.shape[1]
        idx = frozen.kp.nn_idx[live_q]
        kps = frozen.kp.keypoints[live_q]
        w = np.sqrt(config.w_keypoint / m)
        if idx.size:
            rows.append(w * bases[:, idx.ravel(), :].reshape(n_bases, -1).T)
            targets.append(w * (np.repeat(kps, m, axis=0) - mean[idx.ravel()]).reshape(-1))

    sq_norms = np.array([float((bases[k] ** 2).sum()) for k in range(n_bases)])
    if rows:
        a = np.vstack(rows)
        b = np.concatenate(targets)
        lhs = a.T @ a + config.w_reg * np.diag(sq_norms)
        rhs = a.T @ b
        try:
            alpha_new = np.linalg.solve(lhs, rhs)
        except np.linalg.LinAlgError:
            return alpha_now
    else:
        alpha_new = np.zeros(n_bases)

    def frozen_energy(alpha):
        shape = mean + np.einsum("k,knj->nj", alpha, bases)
        e, _, _ = _eval_instance_terms(shape, instance, frozen, config, img_weight)
        return e + config.w_reg * float((alpha**2 * sq_norms).sum())

    return alpha_new if frozen_energy(alpha_new) <= frozen_energy(alpha_now) else alpha_now


# ---------------------------------------------------------------------------
# Test-time fitting


def fit_instance(
    mask,
    cam_init: OrthoCamera,
    model: BasisShapeModel,
    config: Optional[FitConfig] = None,
    instance: Optional[Instance] = None,
) -> InstanceFit:
    """Fit deformation coefficients and camera to a novel silhouette.

    Coefficients start at zero; keypoint terms play no role here. Each
    round alternates a closed-form coefficient update with backtracked
    gradient steps on (scale, rotation, translation); rotation steps
    move in the tangent space and are re-orthonormalized. The normal
    term is reported in the energy breakdown but not descended.
    """
    config = config or FitConfig()
    if instance is None:
        instance = Instance(mask=mask, camera=cam_init)
    else:
        instance = instance.with_camera(cam_init)
    img_weight = 1.0 / (cam_init.scale**2)
    # coefficient solve reuses the training machinery with keypoints off
    bcfg = BasisConfig(
        m_cover=config.m_cover,
        normal_fit_k=config.normal_fit_k,
        w_sil=config.w_sil,
        w_cover=config.w_cover,
        w_keypoint=0.0,
        w_normal=config.w_normal,
        w_reg=config.w_reg,
        trunc_frac=config.trunc_frac,
        basis_norm=model.basis_norm,
    )
    alpha = np.zeros(model.n_bases)
    cam = cam_init
    edges = model.edges
    prev = None
    breakdown = {}
    for _ in range(config.outer_iters):
        inst = instance.with_camera(cam)
        shape = model.shape_for(alpha)
        frozen = _freeze_instance(shape, inst, bcfg, edges)
        if model.n_bases:
            alpha = _solve_alpha(model.mean, model.bases, inst, frozen, alpha, bcfg, img_weight)
        if config.camera_steps and (config.fit_scale or config.fit_rotation or config.fit_translation):
            cam = _descend_camera(model.shape_for(alpha), inst, frozen, bcfg, config, img_weight)
            inst = instance.with_camera(cam)
        shape = model.shape_for(alpha)
        e, _, bd = _eval_instance_terms(shape, inst, frozen, bcfg, img_weight)
        reg = bcfg.w_reg * float((alpha**2).sum()) * model.basis_norm**2
        total = e + reg
        breakdown = {**bd, "reg": reg, "total": total}
        if not np.isfinite(total):
            worst = max(bd, key=lambda k: bd[k])
            raise NumericalError(f"non-finite fit energy (term {worst!r})")
        if prev is not None and abs(prev - total) <= config.rel_tol * max(prev, 1e-12):
            break
        prev = total
    return InstanceFit(alpha=alpha, camera=cam, model=model, energy=breakdown)


def _descend_camera(shape, instance, frozen, bcfg, fcfg, img_weight):
    cam = instance.camera
    scale, rot, trans = cam.scale, cam.rotation.copy(), cam.translation.copy()
    basis_skews = [skew(e) for e in np.eye(3)]

    def energy(s, r, t):
        c = OrthoCamera(s, r, t)
        uv = c.project(shape)
        e_sil, _ = _eval_sil(uv, frozen.sil, frozen.cap_img)
        e_cov, _ = _eval_cov(uv, frozen.cov, frozen.cap_img)
        return img_weight * (bcfg.w_sil * e_sil + bcfg.w_cover * e_cov)

    f = energy(scale, rot, trans)
    for _ in range(fcfg.camera_steps):
        g = scale * rot[:2]
        uv = shape @ g.T + trans
        _, g_sil = _eval_sil(uv, frozen.sil, frozen.cap_img)
        _, g_cov = _eval_cov(uv, frozen.cov, frozen.cap_img)
        grad_uv = img_weight * (bcfg.w_sil * g_sil + bcfg.w_cover * g_cov)
        g_logc = float((grad_uv * (uv - trans)).sum()) if fcfg.fit_scale else 0.0
        if fcfg.fit_rotation:
            g_omega = np.array(
                [float((grad_uv * (shape @ (scale * (sk @ rot)[:2]).T)).sum()) for sk in basis_skews]
            )
        else:
            g_omega = np.zeros(3)
        g_t = grad_uv.sum(axis=0) if fcfg.fit_translation else np.zeros(2)
        gmax = max(abs(g_logc), np.abs(g_omega).max(), np.abs(g_t).max())
        if gmax < 1e-14:
            break
        eta = 0.1 / gmax
        improved = False
        for _ in range(12):
            s_try = scale * float(np.exp(-eta * g_logc))
            r_try = exp_so3(-eta * g_omega) @ rot
            t_try = trans - eta * g_t
            f_try = energy(s_try, r_try, t_try)
            if f_try < f:
                scale, rot, trans, f = s_try, r_try, t_try, f_try
                improved = True
                break
            eta *= 0.5
        if not improved:
            break
    _, rows = nearest_scaled_rows(rot[:2])
    return OrthoCamera(max(scale, 1e-9), complete_rotation(rows), trans)
