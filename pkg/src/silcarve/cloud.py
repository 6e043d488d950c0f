"""Point clouds, triangle meshes and exact nearest-neighbor primitives.

Neighbor queries are exact brute-force with ties broken toward the
lowest point index, so equality tests against enumeration oracles hold
bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DataError

# Split query batches so the pairwise distance matrix stays small.
_CHUNK_ROWS = 2048


@dataclass(frozen=True)
class PointCloud:
    """N x 3 points, optionally with unit normals (NaN rows = invalid)."""

    points: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise DataError(f"points must be (N, 3), got {pts.shape}")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=float)
            if nrm.shape != pts.shape:
                raise DataError("normals must match points shape")
            finite = np.isfinite(nrm).all(axis=1)
            lengths = np.linalg.norm(nrm[finite], axis=1)
            if finite.any() and np.abs(lengths - 1.0).max() > 1e-8:
                raise DataError("normals must have unit length")
            nrm.flags.writeable = False
            object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return self.points.shape[0]

    def diameter(self) -> float:
        """Diagonal of the axis-aligned bounding box."""
        if len(self) == 0:
            return 0.0
        ext = self.points.max(axis=0) - self.points.min(axis=0)
        return float(np.linalg.norm(ext))


@dataclass(frozen=True)
class TriMesh:
    """Triangle mesh; faces index vertices, no degenerate faces allowed."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        faces = np.asarray(self.faces, dtype=np.intp).reshape(-1, 3)
        if faces.size:
            if faces.min() < 0 or faces.max() >= len(verts):
                raise DataError("face index out of range")
            a, b, c = faces[:, 0], faces[:, 1], faces[:, 2]
            if ((a == b) | (b == c) | (a == c)).any():
                raise DataError("degenerate face (repeated vertex index)")
        verts.flags.writeable = False
        faces.flags.writeable = False
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "faces", faces)

    @property
    def is_empty(self) -> bool:
        return self.faces.shape[0] == 0

    def face_areas(self) -> np.ndarray:
        v = self.vertices
        f = self.faces
        cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def bbox_diagonal(self) -> float:
        if len(self.vertices) == 0:
            return 0.0
        ext = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.linalg.norm(ext))


def knn_indices(queries: np.ndarray, points: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest points for each query, (Q, k).

    Exact; equal distances resolve to the lower index (stable sort).
    """
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if k < 1:
        raise DataError("k must be >= 1")
    if points.shape[0] < k:
        raise DataError("insufficient neighbors")
    out = np.empty((queries.shape[0], k), dtype=np.intp)
    for start in range(0, queries.shape[0], _CHUNK_ROWS):
        chunk = queries[start : start + _CHUNK_ROWS]
        d2 = ((chunk[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
        if k == 1:
            out[start : start + _CHUNK_ROWS, 0] = np.argmin(d2, axis=1)
        else:
            out[start : start + _CHUNK_ROWS] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def knn_mean_sq_dist(p: np.ndarray, points: np.ndarray, k: int) -> float:
    """Mean of squared Euclidean distances from p to its k nearest points."""
    p = np.asarray(p, dtype=float)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    idx = knn_indices(p[None, :], points, k)[0]
    return float(((points[idx] - p) ** 2).sum(axis=1).mean())


def plane_fit_normals(points: np.ndarray, k: int, oriented: bool = True):
    """Local plane fits: per-point normal, validity and fit centroid.

    The normal at point i is the eigenvector of the smallest eigenvalue
    of the covariance of its k nearest neighbors (the point counts as
    its own nearest neighbor). With `oriented`, signs are made locally
    consistent by propagation over the neighbor graph, then globally
    flipped toward the centroid-exterior majority. Points whose
    neighborhood covariance has rank < 2 get a NaN normal and False in
    the validity mask.

    Returns (normals (N, 3), valid (N,) bool, centroids (N, 3)).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = pts.shape[0]
    if k < 3:
        raise DataError("normal estimation needs k >= 3")
    if n < k:
        raise DataError("insufficient neighbors")
    nbrs = knn_indices(pts, pts, k)
    local = pts[nbrs]  # (N, k, 3)
    centroids = local.mean(axis=1)
    centered = local - centroids[:, None, :]
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    w, v = np.linalg.eigh(cov)
    normals = v[:, :, 0].copy()
    # Rank < 2 means no plane is defined: the two smallest eigenvalues
    # both vanish relative to the largest.
    scale = np.maximum(w[:, 2], 1e-30)
    valid = (w[:, 1] / scale) > 1e-10
    lengths = np.linalg.norm(normals, axis=1)
    valid &= lengths > 0
    normals[valid] /= lengths[valid, None]
    normals[~valid] = np.nan

    if oriented:
        _orient_by_propagation(normals, valid, nbrs)
        centroid = pts.mean(axis=0)
        outward = np.einsum("ij,ij->i", normals[valid], pts[valid] - centroid)
        vote = outward.sum()
        if vote < 0:
            normals[valid] *= -1.0
        elif vote == 0 and valid.any():
            # Degenerate centroid vote (e.g. planar clouds): canonical sign.
            first = normals[valid][0]
            lead = first[np.nonzero(first)[0][0]] if np.any(first) else 1.0
            if lead < 0:
                normals[valid] *= -1.0
    return normals, valid, centroids


def estimate_normals(points: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Oriented per-point unit normals; see plane_fit_normals.

    Returns (normals (N, 3) with NaN rows where degenerate, valid bool).
    """
    normals, valid, _ = plane_fit_normals(points, k, oriented=True)
    return normals, valid


def _orient_by_propagation(normals: np.ndarray, valid: np.ndarray, nbrs: np.ndarray) -> None:
    """Flip normal signs so neighboring normals agree, BFS in index order."""
    n = normals.shape[0]
    seen = np.zeros(n, dtype=bool)
    for root in range(n):
        if seen[root] or not valid[root]:
            continue
        stack = [root]
        seen[root] = True
        while stack:
            i = stack.pop()
            for j in nbrs[i]:
                if seen[j] or not valid[j]:
                    continue
                if normals[i] @ normals[j] < 0:
                    normals[j] *= -1.0
                seen[j] = True
                stack.append(int(j))


def with_estimated_normals(cloud: PointCloud, k: int) -> PointCloud:
    normals, _ = estimate_normals(cloud.points, k)
    return PointCloud(cloud.points, normals)


def sample_mesh_surface(mesh: TriMesh, n: int, rng: np.random.Generator) -> np.ndarray:
    """n points drawn uniformly by area over the mesh surface."""
    if mesh.is_empty:
        raise DataError("cannot sample an empty mesh")
    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0:
        raise DataError("mesh has zero surface area")
    face_idx = rng.choice(len(areas), size=n, p=areas / total)
    tri = mesh.vertices[mesh.faces[face_idx]]  # (n, 3, 3)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    a = 1.0 - r1
    b = r1 * (1.0 - r2)
    c = r1 * r2
    return a[:, None] * tri[:, 0] + b[:, None] * tri[:, 1] + c[:, None] * tri[:, 2]
