"""Small SO(3) toolbox: sampling, exponential map, projections."""

from __future__ import annotations

import numpy as np


def skew(w: np.ndarray) -> np.ndarray:
    """Cross-product matrix of a 3-vector."""
    return np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )


def exp_so3(w: np.ndarray) -> np.ndarray:
    """Rodrigues exponential of an axis-angle vector."""
    theta = float(np.linalg.norm(w))
    if theta < 1e-12:
        return np.eye(3) + skew(w)
    k = skew(w / theta)
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation via the Shoemake quaternion method."""
    u1, u2, u3 = rng.random(3)
    q = np.array(
        [
            np.sqrt(1.0 - u1) * np.sin(2.0 * np.pi * u2),
            np.sqrt(1.0 - u1) * np.cos(2.0 * np.pi * u2),
            np.sqrt(u1) * np.sin(2.0 * np.pi * u3),
            np.sqrt(u1) * np.cos(2.0 * np.pi * u3),
        ]
    )
    return quaternion_to_matrix(q)


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a quaternion (x, y, z, w), not necessarily unit."""
    x, y, z, w = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def small_rotation(rng: np.random.Generator, max_angle_rad: float) -> np.ndarray:
    """Rotation about a uniform random axis by an angle uniform in [0, max]."""
    axis = rng.normal(size=3)
    axis /= max(np.linalg.norm(axis), 1e-12)
    angle = rng.random() * max_angle_rad
    return exp_so3(axis * angle)


def complete_rotation(rows2x3: np.ndarray) -> np.ndarray:
    """Extend two orthonormal rows to a proper rotation via cross product."""
    r3 = np.cross(rows2x3[0], rows2x3[1])
    return np.vstack([rows2x3, r3])


def nearest_scaled_rows(g: np.ndarray) -> tuple[float, np.ndarray]:
    """Decompose a 2x3 matrix into scale * orthonormal rows.

    Returns the Frobenius-closest factorization: rows from the SVD's
    U @ Vt, scale as the mean singular value.
    """
    u, s, vt = np.linalg.svd(g, full_matrices=False)
    rows = u @ vt
    scale = float(0.5 * (s[0] + s[1]))
    return scale, rows


def geodesic_angle(r1: np.ndarray, r2: np.ndarray) -> float:
    """Geodesic distance between two rotations, in radians."""
    c = 0.5 * (np.trace(r1 @ r2.T) - 1.0)
    return float(np.arccos(np.clip(c, -1.0, 1.0)))
