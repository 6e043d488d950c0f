"""Orthographic z-buffer rasterization of meshes and point splats.

A pixel is covered when its center lies inside a projected primitive;
depth is the camera-frame distance along the viewing direction, with
+inf marking background. Depth over a triangle is interpolated
barycentrically, which is exact under orthographic projection.
"""

from __future__ import annotations

import numpy as np

from .camera import OrthoCamera
from .cloud import TriMesh
from .errors import DataError

_EDGE_EPS = 1e-12


def render_depth_mesh(mesh: TriMesh, cam: OrthoCamera, width: int, height: int) -> np.ndarray:
    """(height, width) depth buffer of a triangle mesh; +inf background."""
    zbuf = np.full((height, width), np.inf)
    if mesh.is_empty:
        return zbuf
    uv = cam.project(mesh.vertices)
    depth = cam.depths(mesh.vertices)
    for face in mesh.faces:
        _splat_triangle(zbuf, uv[face], depth[face])
    return zbuf


def _splat_triangle(zbuf: np.ndarray, tri_uv: np.ndarray, tri_depth: np.ndarray) -> None:
    height, width = zbuf.shape
    (x0, y0), (x1, y1), (x2, y2) = tri_uv
    denom = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2)
    if abs(denom) < _EDGE_EPS:
        return  # edge-on triangle, zero projected area
    xmin = max(int(np.ceil(min(x0, x1, x2))), 0)
    xmax = min(int(np.floor(max(x0, x1, x2))), width - 1)
    ymin = max(int(np.ceil(min(y0, y1, y2))), 0)
    ymax = min(int(np.floor(max(y0, y1, y2))), height - 1)
    if xmin > xmax or ymin > ymax:
        return
    xs, ys = np.meshgrid(np.arange(xmin, xmax + 1), np.arange(ymin, ymax + 1))
    w0 = ((y1 - y2) * (xs - x2) + (x2 - x1) * (ys - y2)) / denom
    w1 = ((y2 - y0) * (xs - x2) + (x0 - x2) * (ys - y2)) / denom
    w2 = 1.0 - w0 - w1
    inside = (w0 >= -_EDGE_EPS) & (w1 >= -_EDGE_EPS) & (w2 >= -_EDGE_EPS)
    if not inside.any():
        return
    d = w0 * tri_depth[0] + w1 * tri_depth[1] + w2 * tri_depth[2]
    patch = zbuf[ymin : ymax + 1, xmin : xmax + 1]
    np.minimum(patch, np.where(inside, d, np.inf), out=patch)


def render_depth_points(
    points: np.ndarray, cam: OrthoCamera, width: int, height: int, splat_radius_px: float
) -> np.ndarray:
    """(height, width) depth buffer of a point cloud splatted as disks."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 0:
        raise DataError("no points to render")
    if splat_radius_px <= 0:
        raise DataError("splat radius must be positive")
    uv = cam.project(pts)
    depth = cam.depths(pts)
    zbuf = np.full((height, width), np.inf)
    r = float(splat_radius_px)
    r2 = r * r
    for (u, v), d in zip(uv, depth):
        xmin = max(int(np.ceil(u - r)), 0)
        xmax = min(int(np.floor(u + r)), width - 1)
        ymin = max(int(np.ceil(v - r)), 0)
        ymax = min(int(np.floor(v + r)), height - 1)
        if xmin > xmax or ymin > ymax:
            continue
        xs, ys = np.meshgrid(np.arange(xmin, xmax + 1), np.arange(ymin, ymax + 1))
        inside = (xs - u) ** 2 + (ys - v) ** 2 <= r2
        patch = zbuf[ymin : ymax + 1, xmin : xmax + 1]
        np.minimum(patch, np.where(inside, d, np.inf), out=patch)
    return zbuf


def auto_splat_radius(points: np.ndarray, cam: OrthoCamera, factor: float = 1.6) -> float:
    """Splat radius from the median nearest-neighbor spacing in the image."""
    from .cloud import knn_indices

    pts = np.atleast_2d(np.asarray(points, dtype=float))
    uv = cam.project(pts)
    if uv.shape[0] < 2:
        return 1.0
    nn = knn_indices(uv, uv, 2)[:, 1]
    spacing = np.linalg.norm(uv - uv[nn], axis=1)
    return max(float(np.median(spacing)) * factor, 0.75)
