"""Independent oracles and small utilities shared across tests.

Everything here is deliberately naive (enumeration, brute force) so it
cannot share a failure mode with the library code it checks.
"""

import numpy as np

from silcarve.camera import OrthoCamera
from silcarve.rotations import complete_rotation, geodesic_angle, random_rotation

FLIP_Z = np.diag([1.0, 1.0, -1.0])


def brute_force_edt(occ: np.ndarray) -> np.ndarray:
    """O(W*H*|fg|) Euclidean distance to the nearest foreground pixel."""
    ys, xs = np.nonzero(occ)
    fg = np.stack([xs, ys], axis=1).astype(float)
    out = np.zeros(occ.shape)
    for y in range(occ.shape[0]):
        for x in range(occ.shape[1]):
            out[y, x] = np.sqrt(((fg - [x, y]) ** 2).sum(axis=1)).min()
    return out


def brute_force_hausdorff(a: np.ndarray, b: np.ndarray, diag: float) -> float:
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    d_ab = np.sqrt(d2.min(axis=1)).max()
    d_ba = np.sqrt(d2.min(axis=0)).max()
    return max(d_ab, d_ba) / diag


def brute_force_knn_mean_sq(p, points, k) -> float:
    d2 = np.sort(((points - p) ** 2).sum(axis=1))
    return float(d2[:k].mean())


def random_camera(rng, scale_range=(0.5, 3.0), trans_range=10.0) -> OrthoCamera:
    scale = rng.uniform(*scale_range)
    trans = rng.uniform(-trans_range, trans_range, size=2)
    return OrthoCamera(scale, random_rotation(rng), trans)


def procrustes_similarity(src: np.ndarray, dst: np.ndarray):
    """Least-squares similarity (s, R in O(3), t) mapping src onto dst
    for corresponding rows. Returns (s, R, t, rms)."""
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    a = src - mu_s
    b = dst - mu_d
    cov = a.T @ b / len(src)
    u, sing, vt = np.linalg.svd(cov)
    r = (u @ vt).T
    var_a = (a**2).sum() / len(src)
    s = sing.sum() / var_a
    t = mu_d - s * r @ mu_s
    mapped = s * src @ r.T + t
    rms = float(np.sqrt(((mapped - dst) ** 2).sum(axis=1).mean()))
    return s, r, t, rms


def nrsfm_gauge_geodesics(model, gt_by_id) -> np.ndarray:
    """Per-instance rotation geodesic errors in degrees, after removing
    the global gauge (orthogonal map fitted on lifted keypoints) and
    minimizing over the per-instance depth reflection."""
    est, true = [], []
    keep = [(n, iid) for n, iid in enumerate(model.instance_ids) if not iid.endswith("~m")]
    for n, iid in keep:
        est.append(model.mean_shape + np.einsum("m,mkj->kj", model.z[n], model.basis))
        true.append(gt_by_id[iid].keypoints_world)
    est = np.concatenate(est)
    true = np.concatenate(true)
    est -= est.mean(axis=0)
    true -= true.mean(axis=0)
    u, _, vt = np.linalg.svd(est.T @ true)
    q = u @ vt
    angles = []
    for n, iid in keep:
        r_eff = complete_rotation(model.cameras[n].rotation[:2] @ q)
        r_gt = gt_by_id[iid].camera.rotation
        angles.append(
            min(
                geodesic_angle(r_eff, r_gt),
                geodesic_angle(FLIP_Z @ r_eff @ FLIP_Z, r_gt),
            )
        )
    return np.degrees(np.array(angles))


def reprojection_rmse(model, gt_by_id, against_noisy=False) -> float:
    """RMSE of predicted keypoints vs ground truth over visible keypoints
    of non-mirrored instances, in pixels."""
    errs = []
    for n, iid in enumerate(model.instance_ids):
        if iid.endswith("~m"):
            continue
        gt = gt_by_id[iid]
        vis = gt.keypoints_visible
        if not vis.any():
            continue
        target = gt.keypoints_uv_noisy if against_noisy else gt.keypoints_uv
        errs.append(np.linalg.norm(model.predicted_uv(n)[vis] - target[vis], axis=1))
    return float(np.sqrt((np.concatenate(errs) ** 2).mean()))


def blob_mask(width=64, height=64, cx=30.0, cy=33.0, rx=15.0, ry=13.0) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width]
    return ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0


def fd_gradient(f, x0: np.ndarray, h: float, indices=None) -> np.ndarray:
    """Central finite differences of a scalar function, optionally over a
    subset of flat indices (others left as zero)."""
    flat = x0.reshape(-1)
    out = np.zeros_like(flat)
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += h
        xm[i] -= h
        out[i] = (f(xp.reshape(x0.shape)) - f(xm.reshape(x0.shape))) / (2.0 * h)
    return out.reshape(x0.shape)
