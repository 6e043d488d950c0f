"""Binary silhouettes, exact distance transforms and Chamfer fields.

Distance transforms are exact Euclidean, computed with the separable
lower-envelope-of-parabolas algorithm (one 1D pass per axis on squared
distances). Fields are sampled at non-integer points by bilinear
interpolation; points outside the raster are clamped to the border and
the clamping distance is added, which pushes far samples outward.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DataError

# Signed distance assigned to foreground pixels of an all-foreground mask
# (no boundary exists, the interior is bottomless).
_DEEP_INSIDE = 1e9

# Stand-in for infinity inside the parabola envelope; must dwarf any real
# squared grid distance while keeping f + q*q exact in float64.
_FAR = 1e12


def _edt_sq_1d(f: np.ndarray) -> np.ndarray:
    """1D squared distance transform of a sampled function f.

    Returns d[p] = min_q (p - q)^2 + f[q]. Lower envelope of parabolas,
    exact for integer-grid sources.
    """
    n = f.shape[0]
    d = np.empty(n)
    v = np.zeros(n, dtype=np.intp)  # locations of parabolas in the envelope
    z = np.empty(n + 1)  # boundaries between parabolas
    k = 0
    z[0] = -np.inf
    z[1] = np.inf
    for q in range(1, n):
        while True:
            p = v[k]
            s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * q - 2.0 * p)
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        p = v[k]
        d[q] = (q - p) ** 2 + f[p]
    return d


def exact_edt(seeds: np.ndarray, sampling: float = 1.0) -> np.ndarray:
    """Exact Euclidean distance from every cell to the nearest True cell.

    Works in any dimension; `sampling` is the grid spacing. All cells
    are infinitely far when `seeds` has no True entry.
    """
    seeds = np.asarray(seeds, dtype=bool)
    if not seeds.any():
        return np.full(seeds.shape, np.inf)
    f = np.where(seeds, 0.0, _FAR)
    for axis in range(f.ndim):
        moved = np.moveaxis(f, axis, -1)
        flat = moved.reshape(-1, moved.shape[-1]).copy()
        for i in range(flat.shape[0]):
            flat[i] = _edt_sq_1d(flat[i])
        f = np.moveaxis(flat.reshape(moved.shape), -1, axis)
    return np.sqrt(f) * sampling


@dataclass(frozen=True)
class SilhouetteMask:
    """Binary occupancy raster plus its boundary pixel coordinates.

    Boundary pixels are exactly the foreground pixels 4-adjacent to a
    background pixel inside the raster; pixels beyond the image edge do
    not count as background, so an all-foreground mask has no boundary.
    """

    occupancy: np.ndarray

    def __post_init__(self):
        occ = np.asarray(self.occupancy).astype(bool)
        if occ.ndim != 2 or occ.shape[0] < 1 or occ.shape[1] < 1:
            raise DataError(f"mask must be a 2D raster, got shape {occ.shape}")
        if not occ.any():
            raise DataError("empty silhouette")
        occ.flags.writeable = False
        object.__setattr__(self, "occupancy", occ)

    @property
    def height(self) -> int:
        return self.occupancy.shape[0]

    @property
    def width(self) -> int:
        return self.occupancy.shape[1]

    @cached_property
    def boundary(self) -> np.ndarray:
        """(B, 2) array of boundary pixel centers as (u, v), row-major order."""
        occ = self.occupancy
        bg = ~occ
        nb = np.zeros_like(occ)
        nb[1:, :] |= bg[:-1, :]
        nb[:-1, :] |= bg[1:, :]
        nb[:, 1:] |= bg[:, :-1]
        nb[:, :-1] |= bg[:, 1:]
        ys, xs = np.nonzero(occ & nb)
        return np.stack([xs.astype(float), ys.astype(float)], axis=1)

    def mirrored(self) -> "SilhouetteMask":
        """Horizontal flip, u' = width - 1 - u."""
        return SilhouetteMask(self.occupancy[:, ::-1].copy())

    def area(self) -> int:
        return int(self.occupancy.sum())


@dataclass(frozen=True)
class ChamferField:
    """Per-pixel exact Euclidean distance to the nearest foreground pixel."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2:
            raise DataError("chamfer field must be a 2D raster")
        if (vals < 0).any():
            raise DataError("chamfer field has negative values")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def sample(self, uv: np.ndarray) -> np.ndarray:
        return sample_field(self.values, uv)

    def gradient(self, uv: np.ndarray, h: float = 0.5) -> np.ndarray:
        return sample_field_gradient(self.values, uv, h)


def chamfer_field(mask: SilhouetteMask) -> ChamferField:
    """Exact Euclidean distance transform of the background region.

    Zero on every foreground pixel.
    """
    return ChamferField(exact_edt(mask.occupancy))


def signed_boundary_field(mask: SilhouetteMask) -> np.ndarray:
    """Signed pixel distance to the mask boundary: positive outside,
    negative inside, zero on boundary pixels.

    An all-foreground mask has no boundary; its interior is assigned a
    large negative sentinel.
    """
    bnd = mask.boundary
    if bnd.shape[0] == 0:
        return np.full(mask.occupancy.shape, -_DEEP_INSIDE)
    seeds = np.zeros(mask.occupancy.shape, dtype=bool)
    seeds[bnd[:, 1].astype(int), bnd[:, 0].astype(int)] = True
    dist = exact_edt(seeds)
    sign = np.where(mask.occupancy, -1.0, 1.0)
    return sign * dist


def sample_field(values: np.ndarray, uv: np.ndarray, outside_slope: float = 1.0) -> np.ndarray:
    """Bilinear sample of a raster at (u, v) points.

    Out-of-raster points are clamped to the border; `outside_slope`
    times the clamping distance is added so exterior samples grow with
    distance from the image.
    """
    uv = np.atleast_2d(np.asarray(uv, dtype=float))
    h, w = values.shape
    u = np.clip(uv[:, 0], 0.0, w - 1.0)
    v = np.clip(uv[:, 1], 0.0, h - 1.0)
    outside = np.hypot(uv[:, 0] - u, uv[:, 1] - v)

    x0 = np.clip(np.floor(u).astype(int), 0, w - 2) if w > 1 else np.zeros(len(u), int)
    y0 = np.clip(np.floor(v).astype(int), 0, h - 2) if h > 1 else np.zeros(len(v), int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = u - x0
    fy = v - y0
    val = (
        values[y0, x0] * (1 - fx) * (1 - fy)
        + values[y0, x1] * fx * (1 - fy)
        + values[y1, x0] * (1 - fx) * fy
        + values[y1, x1] * fx * fy
    )
    return val + outside_slope * outside


def sample_field_gradient(values: np.ndarray, uv: np.ndarray, h: float = 0.5) -> np.ndarray:
    """Central-difference gradient of the interpolated field at (u, v)."""
    uv = np.atleast_2d(np.asarray(uv, dtype=float))
    du = np.array([h, 0.0])
    dv = np.array([0.0, h])
    gu = (sample_field(values, uv + du) - sample_field(values, uv - du)) / (2 * h)
    gv = (sample_field(values, uv + dv) - sample_field(values, uv - dv)) / (2 * h)
    return np.stack([gu, gv], axis=1)
