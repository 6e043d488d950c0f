"""Ground-truth scene generator: parametric shapes, sampled cameras,
rasterized silhouettes, projected keypoints and rendered depth.

Everything is a pure function of (spec, seed). Instance i draws from a
PCG64 generator seeded with SeedSequence(seed, spawn_key=(i,)), so
datasets are reproducible regardless of generation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .camera import OrthoCamera
from .cloud import TriMesh
from .errors import DataError
from .evaluation import DepthMap
from .instance import Instance, KeypointSet
from .raster import render_depth_mesh
from .rotations import random_rotation, small_rotation
from .silhouette import SilhouetteMask

_SQ3 = 1.0 / np.sqrt(3.0)

# 12 well-spread surface directions on the unit shape; pairs swap under
# a world x-flip, which is what horizontal image mirroring induces.
DEFAULT_KEYPOINT_TEMPLATE = {
    "tip_x_pos": (1.0, 0.0, 0.0),
    "tip_x_neg": (-1.0, 0.0, 0.0),
    "tip_y_pos": (0.0, 1.0, 0.0),
    "tip_y_neg": (0.0, -1.0, 0.0),
    "tip_z_pos": (0.0, 0.0, 1.0),
    "tip_z_neg": (0.0, 0.0, -1.0),
    "oct_ppp": (_SQ3, _SQ3, _SQ3),
    "oct_mpp": (-_SQ3, _SQ3, _SQ3),
    "oct_pmp": (_SQ3, -_SQ3, _SQ3),
    "oct_mmp": (-_SQ3, -_SQ3, _SQ3),
    "oct_ppm": (_SQ3, _SQ3, -_SQ3),
    "oct_mpm": (-_SQ3, _SQ3, -_SQ3),
}

DEFAULT_MIRROR_PAIRS = (
    ("tip_x_pos", "tip_x_neg"),
    ("oct_ppp", "oct_mpp"),
    ("oct_pmp", "oct_mmp"),
    ("oct_ppm", "oct_mpm"),
)

_FAMILIES = ("sphere", "ellipsoid", "box", "superquadric")


@dataclass(frozen=True)
class CameraLaw:
    """How cameras are drawn: 'uniform' over rotations, or 'biased' with
    a dominant view hit with probability `dominant_fraction` and angular
    spread `spread_deg` around it."""

    kind: str = "uniform"
    dominant_fraction: float = 0.9
    spread_deg: float = 5.0
    dominant_rotation: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("uniform", "biased"):
            raise DataError(f"unknown camera law {self.kind!r}")

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "biased" and rng.random() < self.dominant_fraction:
            base = self.dominant_rotation if self.dominant_rotation is not None else np.eye(3)
            return small_rotation(rng, np.deg2rad(self.spread_deg)) @ base
        return random_rotation(rng)


@dataclass(frozen=True)
class SceneSpec:
    """Recipe for a synthetic dataset."""

    family: str
    param_ranges: dict
    n_instances: int
    image_size: tuple = (128, 128)
    camera_law: CameraLaw = field(default_factory=CameraLaw)
    keypoint_template: dict = field(default_factory=lambda: dict(DEFAULT_KEYPOINT_TEMPLATE))
    mirror_pairs: tuple = DEFAULT_MIRROR_PAIRS
    sigma_kp_px: float = 0.0
    camera_jitter_deg: float = 0.0
    tessellation: int = 3
    frame_fill: float = 0.7
    keypoint_occlusion: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise DataError(f"unknown shape family {self.family!r}")
        if min(self.image_size) < 32:
            raise DataError("image size must be at least 32")
        if self.n_instances < 1:
            raise DataError("need at least one instance")
        for key, (lo, hi) in self.param_ranges.items():
            if not (0 < lo <= hi) and key not in ("eps1", "eps2"):
                raise DataError(f"parameter range for {key!r} must be positive and ordered")

    def camera_scale(self) -> float:
        """Fixed dataset scale: the largest shape spans ~frame_fill of
        the image's short side."""
        hi = {k: r[1] for k, r in self.param_ranges.items()}
        diam = make_shape(self.family, hi, 1).bbox_diagonal()
        return self.frame_fill * min(self.image_size) / diam


@dataclass(frozen=True)
class GroundTruthInstance:
    """Everything known about one generated instance, noise-free fields
    first; noisy annotations are what downstream consumers see."""

    mesh: TriMesh
    camera: OrthoCamera
    camera_noisy: OrthoCamera
    mask: SilhouetteMask
    depth: DepthMap
    keypoint_names: tuple
    keypoints_uv: np.ndarray
    keypoints_uv_noisy: np.ndarray
    keypoints_visible: np.ndarray
    keypoints_world: np.ndarray
    params: dict
    mirror_pairs: tuple
    instance_id: str

    def to_instance(self) -> Instance:
        kps = KeypointSet(self.keypoint_names, self.keypoints_uv_noisy, self.keypoints_visible)
        return Instance(
            mask=self.mask,
            camera=self.camera_noisy,
            keypoints=kps,
            mirror_pairs=self.mirror_pairs,
            instance_id=self.instance_id,
        )


def make_shape(family: str, params: dict, tessellation: int) -> TriMesh:
    """Watertight triangulation of a parametric shape."""
    if family == "sphere":
        r = _need(params, "radius")
        return _icosphere(tessellation, np.array([r, r, r]))
    if family == "ellipsoid":
        axes = np.array([_need(params, "a"), _need(params, "b"), _need(params, "c")])
        return _icosphere(tessellation, axes)
    if family == "box":
        sides = np.array([_need(params, "a"), _need(params, "b"), _need(params, "c")])
        return _box(max(tessellation, 1), sides)
    if family == "superquadric":
        axes = np.array([_need(params, "a"), _need(params, "b"), _need(params, "c")])
        return _superquadric(
            max(tessellation, 1), axes, _need(params, "eps1"), _need(params, "eps2")
        )
    raise DataError(f"unknown shape family {family!r}")


def _need(params: dict, key: str) -> float:
    if key not in params:
        raise DataError(f"missing shape parameter {key!r}")
    val = float(params[key])
    if key not in ("eps1", "eps2") and val <= 0:
        raise DataError(f"shape parameter {key!r} must be positive")
    return val


def _icosphere(level: int, axes: np.ndarray) -> TriMesh:
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=float,
    )
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [v / np.linalg.norm(v) for v in verts]
    for _ in range(level):
        cache: dict = {}
        new_faces = []

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return TriMesh(np.array(verts) * axes, np.array(faces))


def _box(cells: int, sides: np.ndarray) -> TriMesh:
    half = sides / 2.0
    vert_index: dict = {}
    verts = []

    def vid(ix, iy, iz):
        key = (ix, iy, iz)
        if key not in vert_index:
            vert_index[key] = len(verts)
            verts.append(np.array([ix, iy, iz]) / cells * 2.0 - 1.0)
        return vert_index[key]

    faces = []
    n = cells
    for axis in range(3):
        for side in (0, n):
            for i in range(n):
                for j in range(n):
                    corners = []
                    for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        idx3 = [0, 0, 0]
                        idx3[axis] = side
                        idx3[(axis + 1) % 3] = i + di
                        idx3[(axis + 2) % 3] = j + dj
                        corners.append(vid(*idx3))
                    a, b, c, d = corners
                    if side == n:
                        faces += [(a, b, c), (a, c, d)]
                    else:
                        faces += [(a, c, b), (a, d, c)]
    return TriMesh(np.array(verts) * half, np.array(faces))


def _superquadric(level: int, axes: np.ndarray, eps1: float, eps2: float) -> TriMesh:
    def spow(t, e):
        return np.sign(t) * np.abs(t) ** e

    nv = 8 * level  # latitude bands
    nu = 16 * level  # longitude steps
    etas = np.linspace(-np.pi / 2, np.pi / 2, nv + 1)[1:-1]
    omegas = np.linspace(-np.pi, np.pi, nu, endpoint=False)
    verts = [np.array([0.0, 0.0, -1.0]), np.array([0.0, 0.0, 1.0])]
    ring_ids = []
    for eta in etas:
        ring = []
        for om in omegas:
            x = spow(np.cos(eta), eps1) * spow(np.cos(om), eps2)
            y = spow(np.cos(eta), eps1) * spow(np.sin(om), eps2)
            z = spow(np.sin(eta), eps1)
            ring.append(len(verts))
            verts.append(np.array([x, y, z]))
        ring_ids.append(ring)
    faces = []
    for r in range(len(ring_ids) - 1):
        lo, hi = ring_ids[r], ring_ids[r + 1]
        for u in range(nu):
            u2 = (u + 1) % nu
            faces += [(lo[u], lo[u2], hi[u2]), (lo[u], hi[u2], hi[u])]
    for u in range(nu):
        u2 = (u + 1) % nu
        faces.append((0, ring_ids[0][u2], ring_ids[0][u]))
        faces.append((1, ring_ids[-1][u], ring_ids[-1][u2]))
    return TriMesh(np.array(verts) * axes, np.array(faces))


def sample_cameras(
    n: int,
    law: CameraLaw,
    seed: int,
    scale: float = 1.0,
    translation=(0.0, 0.0),
) -> list:
    """n cameras with rotations drawn from the law, PCG64-seeded."""
    if n < 1:
        raise DataError("need at least one camera")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    trans = np.asarray(translation, dtype=float)
    return [OrthoCamera(scale, law.draw(rng), trans) for _ in range(n)]


def render_mask(mesh: TriMesh, cam: OrthoCamera, width: int, height: int) -> SilhouetteMask:
    """Pixel-center coverage of the projected mesh."""
    zbuf = render_depth_mesh(mesh, cam, width, height)
    cover = np.isfinite(zbuf)
    if not cover.any():
        raise DataError("mesh projects entirely outside the image")
    return SilhouetteMask(cover)


def make_dataset(spec: SceneSpec) -> list:
    """Generate all instances of a scene spec. Deterministic per seed."""
    scale = spec.camera_scale()
    width, height = spec.image_size
    center = np.array([(width - 1) / 2.0, (height - 1) / 2.0])
    out = []
    for i in range(spec.n_instances):
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(spec.seed, spawn_key=(i,)))
        )
        params = {
            key: float(rng.uniform(lo, hi)) for key, (lo, hi) in sorted(spec.param_ranges.items())
        }
        mesh = make_shape(spec.family, params, spec.tessellation)
        rotation = spec.camera_law.draw(rng)
        cam = OrthoCamera(scale, rotation, center)

        zbuf = render_depth_mesh(mesh, cam, width, height)
        cover = np.isfinite(zbuf)
        if not cover.any():
            raise DataError(f"instance {i} projects entirely outside the image")
        mask = SilhouetteMask(cover)
        depth = DepthMap(zbuf, cam)
        if not np.array_equal(mask.occupancy, depth.valid):
            raise DataError("generated mask and depth are inconsistent")

        names = tuple(spec.keypoint_template.keys())
        local = np.array([spec.keypoint_template[n] for n in names], dtype=float)
        kp_world = _template_to_surface(spec.family, params, local)
        kp_uv = cam.project(kp_world)
        kp_depth = cam.depths(kp_world)
        tol = 0.01 * mesh.bbox_diagonal()
        visible = np.zeros(len(names), dtype=bool)
        for k, (u, v) in enumerate(kp_uv):
            ix, iy = int(round(u)), int(round(v))
            if not (0 <= ix < width and 0 <= iy < height):
                continue
            if spec.keypoint_occlusion:
                visible[k] = np.isfinite(zbuf[iy, ix]) and kp_depth[k] <= zbuf[iy, ix] + tol
            else:
                visible[k] = True  # annotation-style data: no hidden-surface test

        kp_noisy = kp_uv.copy()
        if spec.sigma_kp_px > 0:
            kp_noisy = kp_noisy + rng.normal(0.0, spec.sigma_kp_px, size=kp_noisy.shape)
        cam_noisy = cam
        if spec.camera_jitter_deg > 0:
            jitter = small_rotation(rng, np.deg2rad(spec.camera_jitter_deg))
            cam_noisy = OrthoCamera(scale, jitter @ rotation, center)

        out.append(
            GroundTruthInstance(
                mesh=mesh,
                camera=cam,
                camera_noisy=cam_noisy,
                mask=mask,
                depth=depth,
                keypoint_names=names,
                keypoints_uv=kp_uv,
                keypoints_uv_noisy=kp_noisy,
                keypoints_visible=visible,
                keypoints_world=kp_world,
                params=params,
                mirror_pairs=spec.mirror_pairs,
                instance_id=f"{i:03d}",
            )
        )
    return out


def _template_to_surface(family: str, params: dict, local: np.ndarray) -> np.ndarray:
    """Map unit-shape template points onto the instance surface."""
    if family == "sphere":
        r = params["radius"]
        return local * r
    if family in ("ellipsoid", "superquadric"):
        return local * np.array([params["a"], params["b"], params["c"]])
    if family == "box":
        return local * (np.array([params["a"], params["b"], params["c"]]) / 2.0)
    raise DataError(f"unknown shape family {family!r}")
