"""Shape-quality metrics: normalized Hausdorff distance, the
translation/scale-invariant depth error, silhouette IoU, and the
orthographic depth rendering they rely on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .camera import OrthoCamera
from .cloud import PointCloud, TriMesh
from .errors import DataError
from .raster import auto_splat_radius, render_depth_mesh, render_depth_points

_CHUNK = 512


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel camera-frame depth; +inf marks background."""

    depth: np.ndarray
    camera: Optional[OrthoCamera] = None

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=float)
        if d.ndim != 2:
            raise DataError("depth map must be a 2D raster")
        if np.isnan(d).any():
            raise DataError("depth map contains NaN")
        d.flags.writeable = False
        object.__setattr__(self, "depth", d)

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.depth)


def render_depth(
    shape: Union[TriMesh, PointCloud, np.ndarray],
    cam: OrthoCamera,
    width: int,
    height: int,
    splat_radius_px: Optional[float] = None,
) -> DepthMap:
    """Orthographic z-buffer of a mesh or point cloud.

    Point clouds splat as disks; if no radius is given one is derived
    from the median projected point spacing. Raises when nothing covers
    the image.
    """
    if isinstance(shape, TriMesh):
        zbuf = render_depth_mesh(shape, cam, width, height)
    else:
        pts = shape.points if isinstance(shape, PointCloud) else np.asarray(shape, dtype=float)
        if splat_radius_px is None:
            splat_radius_px = auto_splat_radius(pts, cam)
        zbuf = render_depth_points(pts, cam, width, height, splat_radius_px)
    if not np.isfinite(zbuf).any():
        raise DataError("rendered depth map is empty (shape out of frame?)")
    return DepthMap(zbuf, cam)


def hausdorff_norm(a: np.ndarray, b_gt: np.ndarray, gt_bbox_diag: float) -> float:
    """Symmetric Hausdorff distance between sample sets, normalized by
    the ground-truth bounding-box diagonal."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b_gt, dtype=float))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise DataError("empty point set")
    if not gt_bbox_diag > 0:
        raise DataError("normalizer must be positive")
    return max(_directed_hausdorff(a, b), _directed_hausdorff(b, a)) / float(gt_bbox_diag)


def _directed_hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    worst = 0.0
    for start in range(0, a.shape[0], _CHUNK):
        chunk = a[start : start + _CHUNK]
        d2 = ((chunk[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        worst = max(worst, float(np.sqrt(d2.min(axis=1)).max()))
    return worst


def zmae(pred: DepthMap, gt: DepthMap, gamma: float) -> float:
    """Mean absolute depth difference after removing the median offset,
    normalized by gamma (the ground-truth bounding-box diagonal).

    Evaluated on pixels valid in both maps. The offset that minimizes
    the absolute error sum is any median of the residuals; the lower
    median (order statistic ceil(n/2)) is used so the reported offset is
    reproducible.
    """
    if pred.depth.shape != gt.depth.shape:
        raise DataError("depth maps must share dimensions")
    if not gamma > 0:
        raise DataError("gamma must be positive")
    shared = pred.valid & gt.valid
    n = int(shared.sum())
    if n == 0:
        raise DataError("no shared valid pixels")
    resid = pred.depth[shared] - gt.depth[shared]
    beta = np.sort(resid)[(n - 1) // 2]
    return float(np.abs(resid - beta).sum() / (n * gamma))


def point_silhouette(
    points: np.ndarray,
    cam: OrthoCamera,
    width: int,
    height: int,
    radius_px: Optional[float] = None,
) -> np.ndarray:
    """Binary silhouette of a point cloud by morphological closing.

    Projected points are dilated by a disk and eroded by the same
    radius, which fills the interior without inflating the boundary.
    The default radius is four median nearest-neighbor spacings, enough
    to bridge sampling gaps on surface-sampled clouds.
    """
    from .cloud import knn_indices
    from .silhouette import exact_edt

    pts = np.atleast_2d(np.asarray(points, dtype=float))
    uv = cam.project(pts)
    if radius_px is None:
        if uv.shape[0] < 2:
            radius_px = 2.0
        else:
            nn = knn_indices(uv, uv, 2)[:, 1]
            spacing = float(np.median(np.linalg.norm(uv - uv[nn], axis=1)))
            radius_px = max(4.0 * spacing, 1.5)
    seeds = np.zeros((height, width), dtype=bool)
    ix = np.rint(uv[:, 0]).astype(int)
    iy = np.rint(uv[:, 1]).astype(int)
    keep = (ix >= 0) & (ix < width) & (iy >= 0) & (iy < height)
    seeds[iy[keep], ix[keep]] = True
    if not seeds.any():
        return seeds
    dilated = exact_edt(seeds) <= radius_px
    return exact_edt(~dilated) > radius_px


def silhouette_iou(mask_a: np.ndarray, mask_b: np.ndarray) -> float:
    """Intersection over union of two binary rasters; 1 if both empty."""
    a = np.asarray(mask_a).astype(bool)
    b = np.asarray(mask_b).astype(bool)
    if a.shape != b.shape:
        raise DataError("masks must share dimensions")
    union = int((a | b).sum())
    if union == 0:
        return 1.0
    return float(int((a & b).sum()) / union)
