"""Non-rigid structure from motion over annotated 2D keypoints.

EM over a probabilistic linear shape model: each instance's keypoints
are a scaled-orthographic projection of mean_shape + basis @ z with
Gaussian latent z and isotropic image noise. Cameras, shape, basis and
noise variance are re-estimated every M-step; occluded keypoints are
imputed from the forward model after each E-step.

Keypoints should additionally project inside the instance silhouette.
That requirement enters the camera update as a quadratic hinge penalty
on the Chamfer field value at predicted keypoints, weighted by
`mask_penalty` (zero disables it and the step reduces to plain EM).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .camera import OrthoCamera
from .errors import DataError, NumericalError
from .instance import mirror_augment
from .rotations import complete_rotation, exp_so3, nearest_scaled_rows, skew

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class NrsfmConfig:
    mask_penalty: float = 10.0
    penalty_steps: int = 5
    max_iters: int = 300
    rel_tol: float = 1e-6
    mirror: bool = True
    min_visible: int = 4
    min_instances_slack: int = 4  # identifiability floor: 2m + this
    v_init_scale: float = 1e-3
    sigma_floor: float = 1e-12
    seed: int = 0


@dataclass(frozen=True)
class NrsfmModel:
    """Recovered shape model plus per-instance cameras and coefficients."""

    mean_shape: np.ndarray  # (K, 3)
    basis: np.ndarray  # (m, K, 3)
    sigma2: float
    cameras: tuple
    z: np.ndarray  # (N, m) posterior means
    keypoint_names: tuple
    instance_ids: tuple
    mirrored: np.ndarray
    warnings: tuple = ()

    def __post_init__(self):
        if self.sigma2 < 0:
            raise DataError("noise variance must be non-negative")

    @property
    def n_bases(self) -> int:
        return self.basis.shape[0]

    @property
    def n_instances(self) -> int:
        return len(self.cameras)

    def instance_shape(self, n: int) -> np.ndarray:
        """mean + basis combination for instance n, (K, 3)."""
        return self.mean_shape + np.einsum("m,mkj->kj", self.z[n], self.basis)

    def predicted_uv(self, n: int) -> np.ndarray:
        return self.cameras[n].project(self.instance_shape(n))

    def lifted_keypoints(self) -> np.ndarray:
        """(N, K, 3) world-frame 3D keypoints for every instance."""
        return self.mean_shape[None] + np.einsum("nm,mkj->nkj", self.z, self.basis)


@dataclass
class _Observations:
    uv: np.ndarray  # (N, K, 2)
    vis: np.ndarray  # (N, K) bool
    chamfers: list  # per instance ChamferField or None
    ids: tuple
    mirrored: np.ndarray
    names: tuple


def _prepare(instances: list) -> _Observations:
    if not instances:
        raise DataError("no instances")
    names = None
    uv, vis, chamfers, ids, mirrored = [], [], [], [], []
    for inst in instances:
        if inst.keypoints is None:
            raise DataError(f"instance {inst.instance_id!r} has no keypoints")
        if names is None:
            names = inst.keypoints.names
        elif inst.keypoints.names != names:
            raise DataError(
                f"keypoint names of {inst.instance_id!r} disagree with the first instance"
            )
        if not np.isfinite(inst.keypoints.uv[inst.keypoints.visible]).all():
            raise NumericalError(
                f"non-finite likelihood (instances ['{inst.instance_id}'])"
            )
        uv.append(inst.keypoints.uv)
        vis.append(inst.keypoints.visible)
        chamfers.append(inst.chamfer if inst.mask is not None else None)
        ids.append(inst.instance_id)
        mirrored.append(inst.instance_id.endswith("~m"))
    return _Observations(
        uv=np.array(uv),
        vis=np.array(vis),
        chamfers=chamfers,
        ids=tuple(ids),
        mirrored=np.array(mirrored, dtype=bool),
        names=names,
    )


# ---------------------------------------------------------------------------
# E-step


def _posterior(model: NrsfmModel, obs: _Observations, config: NrsfmConfig):
    """Gaussian posterior of z per instance from visible keypoints, plus
    the penalized marginal log-likelihood of the current parameters."""
    n_inst, n_kp = obs.vis.shape
    m = model.n_bases
    sigma2 = max(model.sigma2, config.sigma_floor)
    mus = np.zeros((n_inst, m))
    covs = np.zeros((n_inst, m, m))
    loglik = 0.0
    per_instance_ll = np.zeros(n_inst)
    for n in range(n_inst):
        g = model.cameras[n].projection_rows
        t = model.cameras[n].translation
        v = obs.vis[n]
        pred0 = model.mean_shape @ g.T + t
        r = (obs.uv[n, v] - pred0[v]).ravel()
        if m > 0:
            mk = np.einsum("ij,mkj->kmi", g, model.basis)  # (K, m, 2) -> rows
            mmat = mk[v].transpose(0, 2, 1).reshape(-1, m)  # (2v, m)
            lam = np.eye(m) + (mmat.T @ mmat) / sigma2
            try:
                cov = np.linalg.inv(lam)
            except np.linalg.LinAlgError as exc:
                raise NumericalError("degenerate basis (reduce m)") from exc
            mu = cov @ (mmat.T @ r) / sigma2
            sign, logdet_lam = np.linalg.slogdet(lam)
            if sign <= 0:
                raise NumericalError("degenerate basis (reduce m)")
            quad = (r @ r - (mmat.T @ r) @ cov @ (mmat.T @ r) / sigma2) / sigma2
            ll = -0.5 * (len(r) * (_LOG_2PI + np.log(sigma2)) + logdet_lam + quad)
        else:
            mu = np.zeros(0)
            cov = np.zeros((0, 0))
            ll = -0.5 * (len(r) * (_LOG_2PI + np.log(sigma2)) + (r @ r) / sigma2)
        mus[n] = mu
        covs[n] = cov
        per_instance_ll[n] = ll
        loglik += ll
    penalty = _mask_penalty_total(model, obs, mus, config)
    return mus, covs, loglik - config.mask_penalty * penalty, per_instance_ll


def _mask_penalty_total(model, obs, mus, config) -> float:
    if config.mask_penalty == 0:
        return 0.0
    total = 0.0
    for n in range(model.n_instances):
        ch = obs.chamfers[n]
        if ch is None:
            continue
        shape = model.mean_shape + np.einsum("m,mkj->kj", mus[n], model.basis)
        pred = model.cameras[n].project(shape)
        viol = np.maximum(ch.sample(pred), 0.0)
        total += float((viol**2).sum())
    return total


# ---------------------------------------------------------------------------
# M-step


def _expected_stats(model: NrsfmModel, mus, covs):
    """Per-instance expected shapes and second moments under the posterior."""
    n_inst = model.n_instances
    v = model.basis  # (m, K, 3)
    e_shape = model.mean_shape[None] + np.einsum("nm,mkj->nkj", mus, v)
    ezz = covs + np.einsum("ni,nj->nij", mus, mus)
    # Cov_k per instance: B_k Sigma_n B_k^T, (N, K, 3, 3)
    cov_shape = np.einsum("mki,nmo,okj->nkij", v, covs, v)
    e_sst = (
        np.einsum("nki,nkj->nkij", e_shape, e_shape) + cov_shape
    )  # E[s s^T] = E[s]E[s]^T + Cov
    return e_shape, e_sst, cov_shape, ezz


def _camera_objective(g, t, y, e_shape, cov_sum, sigma2, chamfer, mask_penalty):
    resid = y - e_shape @ g.T - t
    sse = float((resid**2).sum() + np.einsum("ij,jk,ik->", g, cov_sum, g))
    f = sse / (2.0 * sigma2)
    if mask_penalty > 0 and chamfer is not None:
        viol = np.maximum(chamfer.sample(e_shape @ g.T + t), 0.0)
        f += mask_penalty * float((viol**2).sum())
    return f


def _update_camera(cam, y, e_shape, e_sst, cov_sum, sigma2, chamfer, config):
    """Closed-form scaled-orthographic solve, hinge-penalty refinement,
    and a keep-the-best safeguard so the penalized objective never grows."""
    n_kp = y.shape[0]
    f_old = _camera_objective(
        cam.projection_rows, cam.translation, y, e_shape, cov_sum, sigma2, chamfer,
        config.mask_penalty,
    )
    lhs = np.zeros((4, 4))
    lhs[:3, :3] = e_sst.sum(axis=0)
    lhs[:3, 3] = e_shape.sum(axis=0)
    lhs[3, :3] = e_shape.sum(axis=0)
    lhs[3, 3] = n_kp
    rhs = np.zeros((2, 4))
    rhs[:, :3] = np.einsum("ki,kj->ij", y, e_shape)
    rhs[:, 3] = y.sum(axis=0)
    try:
        x = np.linalg.solve(lhs + 1e-12 * np.trace(lhs) * np.eye(4), rhs.T).T
    except np.linalg.LinAlgError:
        return cam, f_old
    scale, rows = nearest_scaled_rows(x[:, :3])
    scale = max(scale, 1e-9)
    rot = complete_rotation(rows)
    # exact scale and translation given the projected rows (keeps the
    # quadratic decreasing despite the manifold projection)
    t = np.zeros(2)
    for _ in range(3):
        t = (y - scale * (e_shape @ rows.T)).mean(axis=0)
        num = float(((y - t) * (e_shape @ rows.T)).sum())
        den = float(
            (np.einsum("ki,ki->", e_shape @ rows.T, e_shape @ rows.T))
            + np.einsum("ij,jk,ik->", rows, cov_sum, rows)
        )
        if den > 1e-30 and num > 0:
            scale = num / den
    scale = max(scale, 1e-9)
    cand = OrthoCamera(scale, rot, t)

    if config.mask_penalty > 0 and chamfer is not None and config.penalty_steps > 0:
        cand = _descend_penalized_camera(
            cand, y, e_shape, cov_sum, sigma2, chamfer, config
        )
    f_new = _camera_objective(
        cand.projection_rows, cand.translation, y, e_shape, cov_sum, sigma2, chamfer,
        config.mask_penalty,
    )
    if f_new <= f_old:
        return cand, f_new
    return cam, f_old


def _descend_penalized_camera(cam, y, e_shape, cov_sum, sigma2, chamfer, config):
    scale = cam.scale
    rot = cam.rotation.copy()
    trans = cam.translation.copy()
    mask_penalty = config.mask_penalty
    basis_skews = [skew(e) for e in np.eye(3)]

    def objective(s, r, t):
        return _camera_objective(
            s * r[:2], t, y, e_shape, cov_sum, sigma2, chamfer, mask_penalty
        )

    f = objective(scale, rot, trans)
    for _ in range(config.penalty_steps):
        g = scale * rot[:2]
        pred = e_shape @ g.T + trans
        resid = y - pred
        df_dg = (-2.0 * np.einsum("ki,kj->ij", resid, e_shape) + 2.0 * g @ cov_sum) / (
            2.0 * sigma2
        )
        df_dt = -2.0 * resid.sum(axis=0) / (2.0 * sigma2)
        viol = np.maximum(chamfer.sample(pred), 0.0)
        grad_c = chamfer.gradient(pred)
        dpen_dp = 2.0 * viol[:, None] * grad_c
        df_dg += mask_penalty * np.einsum("ki,kj->ij", dpen_dp, e_shape)
        df_dt += mask_penalty * dpen_dp.sum(axis=0)
        # chain rule into (log scale, tangent rotation, translation)
        g_logc = float((df_dg * g).sum())
        g_omega = np.array(
            [float((df_dg * (scale * (sk @ rot)[:2])).sum()) for sk in basis_skews]
        )
        grad = np.concatenate([[g_logc], g_omega, df_dt])
        gmax = np.abs(grad).max()
        if gmax < 1e-14:
            break
        eta = 0.1 / gmax
        improved = False
        for _ in range(12):
            s_try = scale * float(np.exp(-eta * g_logc))
            r_try = exp_so3(-eta * g_omega) @ rot
            t_try = trans - eta * df_dt
            f_try = objective(s_try, r_try, t_try)
            if f_try < f:
                scale, rot, trans, f = s_try, r_try, t_try, f_try
                improved = True
                break
            eta *= 0.5
        if not improved:
            break
    # drift guard: re-project the rows to the orthonormal manifold
    _, rows = nearest_scaled_rows(rot[:2])
    return OrthoCamera(max(scale, 1e-9), complete_rotation(rows), trans)


def _update_shape(model, cams, y_filled, mus, covs):
    """Joint per-keypoint solve for mean and basis columns given cameras."""
    n_inst, n_kp = y_filled.shape[:2]
    m = model.n_bases
    dim = m + 1
    ez = np.concatenate([np.ones((n_inst, 1)), mus], axis=1)  # (N, 1+m)
    ezz = np.zeros((n_inst, dim, dim))
    ezz[:, 0, 0] = 1.0
    if m > 0:
        ezz[:, 0, 1:] = mus
        ezz[:, 1:, 0] = mus
        ezz[:, 1:, 1:] = covs + np.einsum("ni,nj->nij", mus, mus)
    gs = np.array([c.projection_rows for c in cams])  # (N, 2, 3)
    gtg = np.einsum("nij,nik->njk", gs, gs)  # (N, 3, 3)
    lhs = np.einsum("nab,nij->aibj", ezz, gtg).reshape(3 * dim, 3 * dim)
    resid = y_filled - np.array([c.translation for c in cams])[:, None, :]
    gtr = np.einsum("nij,nki->nkj", gs, resid)  # (N, K, 3)
    rhs = np.einsum("nkj,na->kaj", gtr, ez)  # (K, dim, 3), matching lhs row order

    mean = np.empty_like(model.mean_shape)
    basis = np.empty_like(model.basis)
    reg = 1e-12 * max(np.trace(lhs), 1.0) * np.eye(3 * dim)
    for k in range(n_kp):
        w = np.linalg.solve(lhs + reg, rhs[k].reshape(-1))  # vec over (dim, 3)
        wk = w.reshape(dim, 3)
        mean[k] = wk[0]
        if m > 0:
            basis[:, k, :] = wk[1:]
    return mean, basis


def _complete_data_objective(model, obs, y_filled, mus, covs, imputed_pred, config):
    """Penalized expected complete-data objective at fixed posterior.

    The hinge penalty is evaluated at the E-step expected keypoints as
    re-projected by the current cameras, so it only couples to camera
    parameters (penalty is active during camera updates only).
    """
    sigma2 = max(model.sigma2, config.sigma_floor)
    e_shape, _, cov_shape, _ = _expected_stats(model, mus, covs)
    total_sse = 0.0
    pen = 0.0
    n_inst, n_kp = y_filled.shape[:2]
    for n in range(n_inst):
        g = model.cameras[n].projection_rows
        t = model.cameras[n].translation
        resid = y_filled[n] - e_shape[n] @ g.T - t
        cov_sum = cov_shape[n].sum(axis=0)
        total_sse += float((resid**2).sum() + np.einsum("ij,jk,ik->", g, cov_sum, g))
        ch = obs.chamfers[n]
        if config.mask_penalty > 0 and ch is not None:
            viol = np.maximum(ch.sample(imputed_pred[n] @ g.T + t), 0.0)
            pen += float((viol**2).sum())
    return total_sse / (2.0 * sigma2) + n_inst * n_kp * np.log(sigma2) + config.mask_penalty * pen


def em_step(model: NrsfmModel, instances: list, config: Optional[NrsfmConfig] = None):
    """One EM iteration. Returns (updated model, penalized log-likelihood
    of the input model, diagnostics dict)."""
    config = config or NrsfmConfig()
    obs = _prepare(instances)
    return _em_step(model, obs, config)


def _em_step(model: NrsfmModel, obs: _Observations, config: NrsfmConfig):
    n_inst, n_kp = obs.vis.shape
    mus, covs, loglik, per_ll = _posterior(model, obs, config)

    # impute occluded keypoints from the forward model
    e_shape0 = model.mean_shape[None] + np.einsum("nm,mkj->nkj", mus, model.basis)
    y_filled = obs.uv.copy()
    imputed = np.empty_like(y_filled)
    for n in range(n_inst):
        pred = model.cameras[n].project(e_shape0[n])
        imputed[n] = pred
        y_filled[n, ~obs.vis[n]] = pred[~obs.vis[n]]

    q_before = _complete_data_objective(model, obs, y_filled, mus, covs, e_shape0, config)

    sigma2_old = max(model.sigma2, config.sigma_floor)
    _, e_sst, cov_shape, _ = _expected_stats(model, mus, covs)
    new_cams = []
    for n in range(n_inst):
        cam, _ = _update_camera(
            model.cameras[n],
            y_filled[n],
            e_shape0[n],
            e_sst[n],
            cov_shape[n].sum(axis=0),
            sigma2_old,
            obs.chamfers[n] if config.mask_penalty > 0 else None,
            config,
        )
        new_cams.append(cam)

    mean, basis = _update_shape(model, new_cams, y_filled, mus, covs)

    interim = replace(
        model, cameras=tuple(new_cams), mean_shape=mean, basis=basis, z=mus
    )
    e_shape1, _, cov_shape1, _ = _expected_stats(interim, mus, covs)
    sse = 0.0
    for n in range(n_inst):
        g = new_cams[n].projection_rows
        t = new_cams[n].translation
        resid = y_filled[n] - e_shape1[n] @ g.T - t
        sse += float((resid**2).sum() + np.einsum("ij,jk,ik->", g, cov_shape1[n].sum(axis=0), g))
    sigma2 = max(sse / (2.0 * n_inst * n_kp), config.sigma_floor)

    new_model = replace(interim, sigma2=sigma2)
    q_after = _complete_data_objective(new_model, obs, y_filled, mus, covs, e_shape0, config)
    diag = {
        "q_before": q_before,
        "q_after": q_after,
        "posterior_mean": mus,
        "posterior_cov": covs,
        "imputed_uv": imputed,
        "per_instance_loglik": per_ll,
    }
    return new_model, loglik, diag


# ---------------------------------------------------------------------------
# Initialization and the outer fit loop


def _vc(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Row such that row @ a == u^T A v for symmetric A packed as a 6-vector."""
    return np.array(
        [
            u[0] * v[0],
            u[1] * v[1],
            u[2] * v[2],
            u[0] * v[1] + u[1] * v[0],
            u[0] * v[2] + u[2] * v[0],
            u[1] * v[2] + u[2] * v[1],
        ]
    )


def _init_rigid(obs: _Observations, m: int, config: NrsfmConfig):
    """Rank-3 factorization with metric upgrade; returns an initial model."""
    n_inst, n_kp = obs.vis.shape
    warnings = []
    w = np.zeros((2 * n_inst, n_kp))
    observed = np.zeros((2 * n_inst, n_kp), dtype=bool)
    for n in range(n_inst):
        for d in range(2):
            col = obs.uv[n, :, d]
            v = obs.vis[n]
            fill = col[v].mean() if v.any() else 0.0
            w[2 * n + d] = np.where(v, col, fill)
            observed[2 * n + d] = v
    # complete missing entries by alternating rank-3 projection; exact
    # rank-3 data recovers to high precision, noisy data just improves
    # on the column-mean fill
    for _ in range(200):
        trans0 = w.mean(axis=1)
        w_cent = w - trans0[:, None]
        u, s, vt = np.linalg.svd(w_cent, full_matrices=False)
        approx = (u[:, :3] * s[:3]) @ vt[:3] + trans0[:, None]
        delta = float(np.abs(np.where(observed, 0.0, approx - w)).max())
        w = np.where(observed, w, approx)
        if delta < 1e-11:
            break

    trans0 = w.mean(axis=1)
    w_cent = w - trans0[:, None]
    u, s, vt = np.linalg.svd(w_cent, full_matrices=False)
    if s[0] <= 0 or s[2] / s[0] < 1e-6:
        warnings.append("degenerate geometry")
    m_hat = u[:, :3] * np.sqrt(np.maximum(s[:3], 1e-30))
    b_hat = np.sqrt(np.maximum(s[:3], 1e-30))[:, None] * vt[:3]

    rows = []
    targets = []
    for n in range(n_inst):
        x, y = m_hat[2 * n], m_hat[2 * n + 1]
        rows.append(_vc(x, x) - _vc(y, y))
        targets.append(0.0)
        rows.append(_vc(x, y))
        targets.append(0.0)
    norm_row = np.zeros(6)
    for n in range(n_inst):
        x, y = m_hat[2 * n], m_hat[2 * n + 1]
        norm_row += _vc(x, x) + _vc(y, y)
    rows.append(norm_row)
    targets.append(2.0 * n_inst)
    a_vec, *_ = np.linalg.lstsq(np.array(rows), np.array(targets), rcond=None)
    a_mat = np.array(
        [
            [a_vec[0], a_vec[3], a_vec[4]],
            [a_vec[3], a_vec[1], a_vec[5]],
            [a_vec[4], a_vec[5], a_vec[2]],
        ]
    )
    evals, evecs = np.linalg.eigh(a_mat)
    if evals.max() <= 0:
        warnings.append("degenerate geometry")
        evals = np.ones(3)
    if evals.min() < 1e-6 * evals.max() and "degenerate geometry" not in warnings:
        warnings.append("degenerate geometry")
    evals = np.maximum(evals, 1e-12 * evals.max())
    q = evecs * np.sqrt(evals)

    m_metric = m_hat @ q
    shape0 = (np.linalg.solve(q, b_hat)).T  # (K, 3)
    cams = []
    for n in range(n_inst):
        g = m_metric[2 * n : 2 * n + 2]
        scale, rows2 = nearest_scaled_rows(g)
        cams.append(
            OrthoCamera(max(scale, 1e-9), complete_rotation(rows2), trans0[2 * n : 2 * n + 2])
        )

    resid = w_cent - m_hat @ b_hat
    sigma2 = max(float((resid**2).mean()), config.sigma_floor)

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed)))
    diam = float(np.linalg.norm(shape0.max(axis=0) - shape0.min(axis=0)))
    basis = rng.normal(0.0, config.v_init_scale * max(diam, 1e-6), size=(m, n_kp, 3))

    return NrsfmModel(
        mean_shape=shape0,
        basis=basis,
        sigma2=sigma2,
        cameras=tuple(cams),
        z=np.zeros((n_inst, m)),
        keypoint_names=obs.names,
        instance_ids=obs.ids,
        mirrored=obs.mirrored,
        warnings=tuple(warnings),
    )


def fit_nrsfm(instances: list, m: int, config: Optional[NrsfmConfig] = None) -> NrsfmModel:
    """Fit cameras, sparse shape and deformation coefficients to a set of
    keypoint-annotated instances.

    Mirrors the data when configured, initializes from rigid
    factorization and iterates EM until the penalized log-likelihood
    stalls. The returned model's z rows are the per-instance deformation
    coefficients (the coarse shape parameter used for visual clustering
    downstream).
    """
    config = config or NrsfmConfig()
    if m < 0:
        raise DataError("basis count must be >= 0")
    usable = []
    warnings = []
    for inst in instances:
        if inst.keypoints is None:
            raise DataError(f"instance {inst.instance_id!r} has no keypoints")
        if int(inst.keypoints.visible.sum()) < config.min_visible:
            warnings.append(f"excluded {inst.instance_id!r}: fewer than "
                            f"{config.min_visible} visible keypoints")
            continue
        usable.append(inst)
    floor = 2 * m + config.min_instances_slack
    if len(usable) < floor:
        raise DataError(f"need at least {floor} usable instances for m={m}, have {len(usable)}")
    if config.mirror:
        usable = mirror_augment(usable)
    obs = _prepare(usable)

    model = _init_rigid(obs, m, config)
    if warnings:
        model = replace(model, warnings=model.warnings + tuple(warnings))

    prev_ll = -np.inf
    for _ in range(config.max_iters):
        model, loglik, diag = _em_step(model, obs, config)
        if not np.isfinite(loglik):
            bad = np.flatnonzero(~np.isfinite(diag["per_instance_loglik"]))
            names = [obs.ids[int(b)] for b in bad[:5]]
            raise NumericalError(f"non-finite likelihood (instances {names})")
        if np.isfinite(prev_ll) and abs(loglik - prev_ll) <= config.rel_tol * max(abs(prev_ll), 1.0):
            break
        prev_ll = loglik
    return _canonical_gauge(model)


def _canonical_gauge(model: NrsfmModel) -> NrsfmModel:
    """Fix the shape-vs-camera scale gauge: mean camera scale becomes 1.

    Projections are invariant under (shape * g, scale / g); picking the
    gauge deterministically makes shapes comparable across runs. The
    recovered world is then approximately pixel-sized.
    """
    g = float(np.mean([c.scale for c in model.cameras]))
    if not np.isfinite(g) or g <= 0:
        return model
    cams = tuple(
        OrthoCamera(c.scale / g, c.rotation, c.translation) for c in model.cameras
    )
    return replace(model, mean_shape=model.mean_shape * g, basis=model.basis * g, cameras=cams)
