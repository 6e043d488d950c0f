"""Voxel grids of truncated signed distances and isosurface extraction.

Values here follow the positive-outside / negative-inside convention,
so thresholding at zero recovers the enclosed solid. The grid origin is
the world position of the center of voxel (0, 0, 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from skimage import measure

from .cloud import TriMesh
from .errors import DataError
from .silhouette import exact_edt

# Stored in headers when the upper truncation is "unbounded"; arithmetic
# stays total by replacing it with 10x the grid diagonal.
UNBOUNDED = float("inf")


@dataclass(frozen=True)
class GridSpec:
    """Regular voxel grid: dims (nx, ny, nz), origin, cubic voxel size."""

    dims: tuple
    origin: np.ndarray
    voxel_size: float

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 2:
            raise DataError(f"grid dims must be 3 values >= 2, got {dims}")
        if not self.voxel_size > 0:
            raise DataError("voxel_size must be positive")
        origin = np.asarray(self.origin, dtype=float).reshape(3)
        origin.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "voxel_size", float(self.voxel_size))

    @property
    def diagonal(self) -> float:
        ext = (np.array(self.dims) - 1) * self.voxel_size
        return float(np.linalg.norm(ext))

    def centers_grid(self) -> np.ndarray:
        """(nx, ny, nz, 3) voxel centers as a grid."""
        nx, ny, nz = self.dims
        ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
        return self.origin + np.stack([ix, iy, iz], axis=-1) * self.voxel_size

    def __eq__(self, other) -> bool:
        if not isinstance(other, GridSpec):
            return NotImplemented
        return (
            self.dims == other.dims
            and np.array_equal(self.origin, other.origin)
            and self.voxel_size == other.voxel_size
        )

    def to_json_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "origin": self.origin.tolist(),
            "voxel_size": self.voxel_size,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "GridSpec":
        return cls(tuple(d["dims"]), np.array(d["origin"], float), float(d["voxel_size"]))


def cube_grid(side: float, resolution: int, center=(0.0, 0.0, 0.0)) -> GridSpec:
    """Cubic grid of `resolution`^3 voxels spanning `side` around `center`."""
    if resolution < 2:
        raise DataError("grid resolution must be >= 2")
    voxel = side / resolution
    center = np.asarray(center, dtype=float)
    origin = center - 0.5 * voxel * (resolution - 1)
    return GridSpec((resolution, resolution, resolution), origin, voxel)


@dataclass(frozen=True)
class TsdfVolume:
    """Truncated signed distance field over a regular grid.

    Every stored value lies in [min_trunc, max_trunc]; min_trunc <= 0
    and max_trunc > 0 for single-cone fields, but accumulated fields may
    carry widened bounds.
    """

    grid: GridSpec
    values: np.ndarray
    min_trunc: float
    max_trunc: float

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.dims:
            raise DataError(f"values shape {vals.shape} does not match grid {self.grid.dims}")
        lo, hi = float(self.min_trunc), float(self.max_trunc)
        if not lo <= hi:
            raise DataError("min_trunc must not exceed max_trunc")
        if vals.size and (vals.min() < lo - 1e-9 or vals.max() > hi + 1e-9):
            raise DataError("volume values violate truncation bounds")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "min_trunc", lo)
        object.__setattr__(self, "max_trunc", hi)


def resolve_max_trunc(max_trunc: float, grid: GridSpec) -> float:
    """Replace an unbounded upper truncation with a finite sentinel."""
    if max_trunc is None or np.isinf(max_trunc):
        return 10.0 * grid.diagonal
    return float(max_trunc)


def occupancy(vol: TsdfVolume, iso: float = 0.0) -> np.ndarray:
    """Boolean voxel grid: value <= iso."""
    return vol.values <= iso


def extract_isosurface(vol: TsdfVolume, level: float = 0.0) -> TriMesh:
    """Marching-cubes triangle mesh of {x : field(x) = level}.

    Levels outside the field's value range yield an empty mesh.
    """
    vals = vol.values
    if not (vals.min() < level < vals.max()):
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.intp))
    verts, faces, _, _ = measure.marching_cubes(
        vals, level=level, spacing=(vol.grid.voxel_size,) * 3, allow_degenerate=False
    )
    return TriMesh(verts + vol.grid.origin, faces.astype(np.intp))


def points_to_volume(points: np.ndarray, grid: GridSpec, shell_radius_voxels: float = 1.5) -> TsdfVolume:
    """Distance field to a point cloud, offset so iso-0 wraps the points.

    Points are deposited into their containing voxels; the field is the
    exact voxel-center distance to the deposit minus the shell radius.
    Used to mesh fitted point clouds.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 0:
        raise DataError("no points to mesh")
    idx = np.rint((pts - grid.origin) / grid.voxel_size).astype(int)
    inside = ((idx >= 0) & (idx < np.array(grid.dims))).all(axis=1)
    if not inside.any():
        raise DataError("grid/camera mismatch: all points fall outside the grid")
    idx = idx[inside]
    seeds = np.zeros(grid.dims, dtype=bool)
    seeds[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    dist = exact_edt(seeds, sampling=grid.voxel_size)
    field = dist - shell_radius_voxels * grid.voxel_size
    return TsdfVolume(grid, field, float(field.min()), float(field.max()))
