"""Scaled orthographic cameras and point projection.

A camera maps a world point X to image coordinates
``scale * R[:2] @ X + translation`` where R is a proper rotation whose
first two rows are the projection rows and whose third row is the
viewing direction. Image coordinates are (u, v) with u along the image
width; the center of pixel (ix, iy) sits at (u, v) = (ix, iy).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

ORTHONORMAL_TOL = 1e-8


@dataclass(frozen=True)
class OrthoCamera:
    """Scaled-orthographic camera: scale, 3x3 rotation, 2D translation."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=float)
        trans = np.array(self.translation, dtype=float)
        if rot.shape != (3, 3):
            raise DataError(f"rotation must be 3x3, got {rot.shape}")
        if trans.shape != (2,):
            raise DataError(f"translation must be a 2-vector, got {trans.shape}")
        if not np.isfinite(self.scale) or self.scale <= 0:
            raise DataError(f"camera scale must be positive, got {self.scale}")
        err = np.abs(rot @ rot.T - np.eye(3)).max()
        if not err < ORTHONORMAL_TOL:
            raise DataError(f"rotation is not orthonormal (max deviation {err:.3g})")
        rot.flags.writeable = False
        trans.flags.writeable = False
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @property
    def projection_rows(self) -> np.ndarray:
        """The 2x3 matrix scale * R[:2]."""
        return self.scale * self.rotation[:2]

    @property
    def view_direction(self) -> np.ndarray:
        """Third rotation row; depth increases along it."""
        return self.rotation[2]

    def project(self, points: np.ndarray) -> np.ndarray:
        """Project (N, 3) world points to (N, 2) image coordinates."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return pts @ self.projection_rows.T + self.translation

    def depths(self, points: np.ndarray) -> np.ndarray:
        """Camera-frame depth of each point (world units, smaller = closer)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return pts @ self.rotation[2]

    def to_json_dict(self) -> dict:
        return {
            "scale": self.scale,
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "OrthoCamera":
        return cls(
            scale=float(d["scale"]),
            rotation=np.array(d["rotation"], dtype=float),
            translation=np.array(d["translation"], dtype=float),
        )


def project(points, cam: OrthoCamera) -> np.ndarray:
    """Functional form of OrthoCamera.project."""
    return cam.project(points)
