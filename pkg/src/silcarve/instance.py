"""Per-instance training bundle: silhouette, camera, keypoints.

Derived rasters (Chamfer field, signed boundary field) are computed
lazily and cached, since every optimizer touches them repeatedly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property
from typing import Optional

import numpy as np

from .camera import OrthoCamera
from .errors import DataError
from .silhouette import ChamferField, SilhouetteMask, chamfer_field, signed_boundary_field


@dataclass(frozen=True)
class KeypointSet:
    """Named 2D keypoints with visibility flags, consistently ordered."""

    names: tuple
    uv: np.ndarray
    visible: np.ndarray

    def __post_init__(self):
        uv = np.asarray(self.uv, dtype=float).reshape(-1, 2)
        vis = np.asarray(self.visible, dtype=bool).reshape(-1)
        names = tuple(str(n) for n in self.names)
        if len(names) != uv.shape[0] or len(names) != vis.shape[0]:
            raise DataError("keypoint names, positions and visibility disagree in length")
        if len(set(names)) != len(names):
            raise DataError("duplicate keypoint names")
        uv.flags.writeable = False
        vis.flags.writeable = False
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "uv", uv)
        object.__setattr__(self, "visible", vis)

    def __len__(self) -> int:
        return len(self.names)


@dataclass(frozen=True)
class Instance:
    """One training or test instance; mask may be absent for
    keypoint-only data."""

    mask: Optional[SilhouetteMask] = None
    camera: Optional[OrthoCamera] = None
    keypoints: Optional[KeypointSet] = None
    keypoints3d: Optional[np.ndarray] = None
    mirror_pairs: tuple = ()
    instance_id: str = ""

    def _require_mask(self) -> SilhouetteMask:
        if self.mask is None:
            raise DataError(f"instance {self.instance_id!r} has no silhouette mask")
        return self.mask

    @cached_property
    def chamfer(self) -> ChamferField:
        return chamfer_field(self._require_mask())

    @cached_property
    def signed_field(self) -> np.ndarray:
        return signed_boundary_field(self._require_mask())

    @property
    def boundary(self) -> np.ndarray:
        return self._require_mask().boundary

    def with_camera(self, cam: OrthoCamera) -> "Instance":
        return replace(self, camera=cam)


def mirror_instance(inst: Instance) -> Instance:
    """Horizontally mirrored copy: u' = W - 1 - u, keypoint labels swapped
    per the declared left/right pairing, mask flipped.

    Cameras mirror to rows (-r1, r2, -r3) with tx' = W - 1 - tx, the
    proper rotation consistent with the image flip. World-side 3D
    keypoints flip in x with their labels.
    """
    if inst.keypoints is not None and not inst.mirror_pairs:
        raise DataError(f"instance {inst.instance_id!r} has keypoints but no mirror pairing table")
    w = inst._require_mask().width
    mask = inst.mask.mirrored()

    kps = None
    perm = None
    if inst.keypoints is not None:
        swap = {}
        for left, right in inst.mirror_pairs:
            swap[left] = right
            swap[right] = left
        names = inst.keypoints.names
        unknown = set(swap) - set(names)
        if unknown:
            raise DataError(f"mirror pairing names not in keypoint set: {sorted(unknown)}")
        perm = np.array([names.index(swap.get(n, n)) for n in names])
        uv = inst.keypoints.uv[perm].copy()
        uv[:, 0] = (w - 1) - uv[:, 0]
        kps = KeypointSet(names, uv, inst.keypoints.visible[perm])

    cam = None
    if inst.camera is not None:
        rot = inst.camera.rotation * np.array([[-1.0], [1.0], [-1.0]])
        trans = np.array([(w - 1) - inst.camera.translation[0], inst.camera.translation[1]])
        cam = OrthoCamera(inst.camera.scale, rot, trans)

    kp3d = None
    if inst.keypoints3d is not None:
        kp3d = np.asarray(inst.keypoints3d, dtype=float).copy()
        if perm is not None:
            kp3d = kp3d[perm]
        kp3d[:, 0] *= -1.0

    return Instance(
        mask=mask,
        camera=cam,
        keypoints=kps,
        keypoints3d=kp3d,
        mirror_pairs=inst.mirror_pairs,
        instance_id=inst.instance_id + "~m",
    )


def mirror_augment(instances: list) -> list:
    """Originals plus their horizontally mirrored copies, in order."""
    return list(instances) + [mirror_instance(inst) for inst in instances]
