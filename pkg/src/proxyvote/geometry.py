"""Closed-form 2D/3D geometry: direction vectors, perpendicular feet,
point-to-line distances, ray intersection and pinhole projection.

Conventions: image coordinates are continuous pixel centers, so pixel
(row i, col j) sits at (x, y) = (j + 0.5, i + 0.5). 2D points are
(x, y) arrays, 3D points (x, y, z) arrays; stacks use the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError, DegenerateInputError

# Direction vectors shorter than this are treated as degenerate.
EPS_NORM = 1e-8
# Rays whose normalized cross product is below this are parallel.
EPS_PARALLEL = 1e-6


@dataclass(frozen=True)
class Pose:
    """Rigid transform (R, t) from object to camera coordinates."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("pose has non-finite entries")
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9:
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation determinant is not +1 within 1e-9")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def apply(self, points):
        """Transform (..., 3) object points into the camera frame."""
        X = np.asarray(points, dtype=float)
        return X @ self.rotation.T + self.translation

    def inverse(self) -> "Pose":
        R = self.rotation.T
        return Pose(R, -R @ self.translation)


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


def unit_direction(p, k):
    """Unit vector pointing from pixel p toward keypoint k."""
    p = np.asarray(p, dtype=float)
    k = np.asarray(k, dtype=float)
    d = k - p
    n = float(np.hypot(d[0], d[1]))
    if n < EPS_NORM:
        raise DegenerateInputError(f"coincident points: p={p}, k={k}")
    return d / n


def point_line_distance(p, v, k):
    """Perpendicular distance from k to the line through p with direction v.

    v need not be unit length; it is normalized internally.
    """
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    k = np.asarray(k, dtype=float)
    n = float(np.hypot(v[0], v[1]))
    if n < EPS_NORM:
        raise DegenerateInputError(f"near-zero direction: v={v}")
    cross = v[0] * (k[1] - p[1]) - v[1] * (k[0] - p[0])
    return abs(cross) / n


def foot_of_perpendicular(p, v, k):
    """Point on the line through p with direction v closest to k."""
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    k = np.asarray(k, dtype=float)
    nsq = float(v[0] * v[0] + v[1] * v[1])
    if nsq < EPS_NORM * EPS_NORM:
        raise DegenerateInputError(f"near-zero direction: v={v}")
    t = float(np.dot(k - p, v)) / nsq
    return p + t * v


def ray_intersection(p1, v1, p2, v2):
    """Intersection of the two infinite lines, or None when near-parallel."""
    p1 = np.asarray(p1, dtype=float)
    v1 = np.asarray(v1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    cross = v1[0] * v2[1] - v1[1] * v2[0]
    n1 = np.hypot(v1[0], v1[1])
    n2 = np.hypot(v2[0], v2[1])
    if n1 < EPS_NORM or n2 < EPS_NORM:
        return None
    if abs(cross) / (n1 * n2) < EPS_PARALLEL:
        return None
    d = p2 - p1
    t1 = (d[0] * v2[1] - d[1] * v2[0]) / cross
    return p1 + t1 * v1


def project(pose: Pose, intr: Intrinsics, points):
    """Pinhole projection of (..., 3) object points to (..., 2) pixels."""
    cam = pose.apply(points)
    z = cam[..., 2]
    if np.any(z <= 0):
        raise BehindCameraError("point has non-positive camera-frame depth")
    x = intr.fx * cam[..., 0] / z + intr.cx
    y = intr.fy * cam[..., 1] / z + intr.cy
    return np.stack([x, y], axis=-1)


def pixel_centers(height: int, width: int) -> np.ndarray:
    """(H, W, 2) array of pixel-center coordinates (x, y)."""
    ys, xs = np.mgrid[0:height, 0:width]
    return np.stack([xs + 0.5, ys + 0.5], axis=-1).astype(float)
