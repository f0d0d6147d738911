"""Camera model, rigid-body poses and small helpers for class distributions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

DEFAULT_MAX_DEPTH = 8.0
DEFAULT_DEPTH_SCALE = 1.0 / 5000.0
CELL = 8  # prediction grid downsample factor


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if self.width % CELL or self.height % CELL:
            raise ValueError(f"image size {self.width}x{self.height} must be divisible by {CELL}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def grid_shape(self) -> tuple[int, int]:
        """Shape of the low-resolution prediction grid."""
        return (self.height // CELL, self.width // CELL)

    def scaled(self, width: int, height: int) -> "CameraIntrinsics":
        sx, sy = width / self.width, height / self.height
        return CameraIntrinsics(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height)

    @classmethod
    def default(cls, width: int = 320, height: int = 240) -> "CameraIntrinsics":
        # 525 px focal at 640x480, the usual Kinect-class value
        return cls(525.0 * width / 640.0, 525.0 * height / 480.0, width / 2.0, height / 2.0, width, height)


@dataclass(frozen=True)
class Pose:
    """Rigid transform mapping camera coordinates to world coordinates."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthonormal with determinant +1")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose":
        T = np.asarray(T, dtype=np.float64)
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def from_quaternion(cls, translation, quat_xyzw) -> "Pose":
        return cls(Rotation.from_quat(quat_xyzw).as_matrix(), translation)

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(Rotation.from_rotvec(rotvec).as_matrix(), translation)

    @classmethod
    def exp(cls, xi: np.ndarray) -> "Pose":
        """Pose from a twist (omega, v), treating rotation and translation separately."""
        xi = np.asarray(xi, dtype=np.float64)
        return cls(Rotation.from_rotvec(xi[:3]).as_matrix(), xi[3:])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def quaternion(self) -> np.ndarray:
        """Rotation as (qx, qy, qz, qw)."""
        return Rotation.from_matrix(self.rotation).as_quat()

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        R = self.rotation @ other.rotation
        # re-orthonormalize so long chains of compositions stay valid
        u, _, vt = np.linalg.svd(R)
        R = u @ vt
        return Pose(R, self.rotation @ other.translation + self.translation)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply to an (..., 3) array of points."""
        return points @ self.rotation.T + self.translation

    def rotate(self, vectors: np.ndarray) -> np.ndarray:
        return vectors @ self.rotation.T

    def angle_to(self, other: "Pose") -> float:
        """Rotation angle in radians between two poses."""
        c = (np.trace(self.rotation.T @ other.rotation) - 1.0) / 2.0
        return float(np.arccos(np.clip(c, -1.0, 1.0)))

    def distance_to(self, other: "Pose") -> float:
        return float(np.linalg.norm(self.translation - other.translation))


def round_half_away(x):
    """Round to nearest with ties away from zero (np.round rounds half to even)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def project(point, intr: CameraIntrinsics) -> tuple[int, int] | None:
    """Project a camera-frame point to a pixel, or None when out of frame."""
    x, y, z = (float(v) for v in point)
    if not z > 0:
        return None
    u = int(round_half_away(intr.fx * x / z + intr.cx))
    v = int(round_half_away(intr.fy * y / z + intr.cy))
    if 0 <= u < intr.width and 0 <= v < intr.height:
        return (u, v)
    return None


def project_points(points: np.ndarray, intr: CameraIntrinsics):
    """Vectorised projection of (M, 3) camera-frame points.

    Returns integer pixel columns and rows plus a mask of in-frame points.
    Entries outside the mask are undefined.
    """
    points = np.asarray(points, dtype=np.float64)
    z = points[:, 2]
    ok = z > 0
    zs = np.where(ok, z, 1.0)
    u = round_half_away(intr.fx * points[:, 0] / zs + intr.cx)
    v = round_half_away(intr.fy * points[:, 1] / zs + intr.cy)
    ok &= (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    u = np.where(ok, u, 0).astype(np.int64)
    v = np.where(ok, v, 0).astype(np.int64)
    return u, v, ok


def backproject(pixel, depth: float, intr: CameraIntrinsics) -> np.ndarray:
    if not depth > 0:
        raise ValueError(f"depth must be positive, got {depth}")
    x, y = pixel
    return np.array([depth * (x - intr.cx) / intr.fx, depth * (y - intr.cy) / intr.fy, depth])


def sanitize_depth(depth: np.ndarray, max_depth: float = DEFAULT_MAX_DEPTH) -> np.ndarray:
    """Return a float64 depth image in meters with invalid readings set to 0."""
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise ValueError(f"depth must be a 2D array, got shape {depth.shape}")
    if not np.all(np.isfinite(depth)):
        raise ValueError("depth contains non-finite values")
    if np.any(depth < 0):
        raise ValueError("depth contains negative values")
    return np.where(depth > max_depth, 0.0, depth)


def normalize(p: np.ndarray, axis: int = -1) -> np.ndarray:
    """Scale probability vectors along ``axis`` so they sum to one."""
    p = np.asarray(p, dtype=np.float64)
    return p / p.sum(axis=axis, keepdims=True)


def uniform_distribution(n_classes: int) -> np.ndarray:
    return np.full(n_classes, 1.0 / n_classes)
