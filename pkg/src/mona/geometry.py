"""Rigid-body and pinhole-camera primitives.

Quaternions are stored scalar-last, ``[qx, qy, qz, qw]``, the same order as
TUM trajectory files. Sign is canonicalised to ``qw >= 0`` on normalisation.

Conventions: projections take a *camera-from-world* pose, while
:class:`Trajectory` entries hold *world-from-camera* poses. Use
:func:`camera_from_world` / :func:`world_from_camera` to switch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import NonPositiveDepthError, ValidationError

DEPTH_EPS = 1e-9


# ---------------------------------------------------------------------------
# quaternion helpers
# ---------------------------------------------------------------------------


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64).reshape(4)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n < 1e-12:
        raise ValidationError(f"quaternion has degenerate norm {n!r}")
    # leave unit quaternions untouched so serialisation round-trips bit-exactly
    if abs(n - 1.0) > 4 * np.finfo(float).eps:
        q = q / n
    if q[3] < 0.0:
        q = -q
    return q


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product ``a * b`` (rotation by b, then by a)."""
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ]
    )


def quat_conjugate(q) -> np.ndarray:
    return np.array([-q[0], -q[1], -q[2], q[3]], dtype=np.float64)


def quat_to_matrix(q) -> np.ndarray:
    x, y, z, w = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_matrix(r) -> np.ndarray:
    """Shepperd's method; picks the largest diagonal term for stability."""
    r = np.asarray(r, dtype=np.float64)
    tr = r[0, 0] + r[1, 1] + r[2, 2]
    if tr > max(r[0, 0], r[1, 1], r[2, 2]):
        s = 2.0 * math.sqrt(1.0 + tr)
        q = [(r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s, 0.25 * s]
    elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
        s = 2.0 * math.sqrt(max(1.0 + r[0, 0] - r[1, 1] - r[2, 2], 0.0))
        q = [0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s, (r[2, 1] - r[1, 2]) / s]
    elif r[1, 1] >= r[2, 2]:
        s = 2.0 * math.sqrt(max(1.0 + r[1, 1] - r[0, 0] - r[2, 2], 0.0))
        q = [(r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s, (r[0, 2] - r[2, 0]) / s]
    else:
        s = 2.0 * math.sqrt(max(1.0 + r[2, 2] - r[0, 0] - r[1, 1], 0.0))
        q = [(r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s, (r[1, 0] - r[0, 1]) / s]
    return quat_normalize(q)


def quat_from_rotvec(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).reshape(3)
    angle = float(np.linalg.norm(v))
    if angle < 1e-12:
        # second-order expansion keeps tiny rotations exact to machine precision
        return quat_normalize([0.5 * v[0], 0.5 * v[1], 0.5 * v[2], 1.0 - angle * angle / 8.0])
    axis = v / angle
    s = math.sin(0.5 * angle)
    return quat_normalize([axis[0] * s, axis[1] * s, axis[2] * s, math.cos(0.5 * angle)])


def quat_angle(q) -> float:
    """Rotation angle in radians, safe across the quaternion double cover."""
    q = np.asarray(q, dtype=np.float64)
    return 2.0 * math.atan2(float(np.linalg.norm(q[:3])), abs(float(q[3])))


def rotvec_to_matrix(v) -> np.ndarray:
    return quat_to_matrix(quat_from_rotvec(v))


def skew(v) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------


def _vec3(v) -> np.ndarray:
    a = np.array(v, dtype=np.float64).reshape(3)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``p -> R p + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = quat_normalize(self.rotation)
        q.setflags(write=False)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", _vec3(self.translation))

    @classmethod
    def identity(cls) -> Pose:
        return cls()

    @classmethod
    def from_matrix(cls, m) -> Pose:
        m = np.asarray(m, dtype=np.float64)
        return cls(quat_from_matrix(m[:3, :3]), m[:3, 3])

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> Pose:
        return cls(quat_from_rotvec(rotvec), translation)

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        """Transform an (..., 3) array of points."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation_matrix.T + self.translation

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __repr__(self):
        return f"Pose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """``p -> scale * R p + t``."""

    scale: float = 1.0
    rotation: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValidationError(f"similarity scale must be positive, got {self.scale!r}")
        object.__setattr__(self, "scale", float(self.scale))
        q = quat_normalize(self.rotation)
        q.setflags(write=False)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", _vec3(self.translation))

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return self.scale * p @ self.rotation_matrix.T + self.translation

    def inverse(self) -> SimilarityTransform:
        q_inv = quat_conjugate(self.rotation)
        t = -quat_to_matrix(q_inv) @ self.translation / self.scale
        return SimilarityTransform(1.0 / self.scale, q_inv, t)

    def __repr__(self):
        return (
            f"SimilarityTransform(scale={self.scale!r}, rotation={self.rotation.tolist()}, "
            f"translation={self.translation.tolist()})"
        )


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
            raise ValidationError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ValidationError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def in_image(self, pixels) -> np.ndarray:
        px = np.asarray(pixels)
        return (px[..., 0] >= 0) & (px[..., 0] < self.width) & (px[..., 1] >= 0) & (px[..., 1] < self.height)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-ordered world-from-camera poses keyed by frame index."""

    frames: tuple[int, ...]
    poses: tuple[Pose, ...]
    timestamps: tuple[float, ...]

    def __post_init__(self):
        frames = tuple(int(f) for f in self.frames)
        poses = tuple(self.poses)
        stamps = tuple(float(s) for s in self.timestamps)
        if not (len(frames) == len(poses) == len(stamps)):
            raise ValidationError("trajectory frames, poses and timestamps differ in length")
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValidationError("trajectory frame indices must be strictly increasing")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "timestamps", stamps)

    @classmethod
    def from_poses(cls, poses: Sequence[Pose], timestamps: Iterable[float] | None = None,
                   frames: Iterable[int] | None = None) -> Trajectory:
        poses = tuple(poses)
        frames = tuple(range(len(poses))) if frames is None else tuple(frames)
        timestamps = tuple(float(f) for f in frames) if timestamps is None else tuple(timestamps)
        return cls(frames, poses, timestamps)

    def __len__(self):
        return len(self.frames)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.frames == other.frames
            and self.timestamps == other.timestamps
            and all(a == b for a, b in zip(self.poses, other.poses))
        )

    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses]).reshape(-1, 3)

    def pose_at(self, frame: int) -> Pose:
        return self.poses[self.frames.index(frame)]

    def select(self, frames: Iterable[int]) -> Trajectory:
        lookup = {f: i for i, f in enumerate(self.frames)}
        idx = [lookup[f] for f in frames]
        return Trajectory(
            tuple(self.frames[i] for i in idx),
            tuple(self.poses[i] for i in idx),
            tuple(self.timestamps[i] for i in idx),
        )


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def compose_poses(a: Pose, b: Pose) -> Pose:
    """``a ∘ b``: apply b first, then a."""
    q = quat_multiply(a.rotation, b.rotation)
    t = a.rotation_matrix @ b.translation + a.translation
    return Pose(q, t)


def invert_pose(a: Pose) -> Pose:
    q = quat_conjugate(a.rotation)
    return Pose(q, -(quat_to_matrix(q) @ a.translation))


camera_from_world = invert_pose
world_from_camera = invert_pose


def project_point(k: CameraIntrinsics, cam_from_world: Pose, p) -> tuple[np.ndarray, float]:
    """Project one world point; returns ``(pixel, depth)``."""
    xc = cam_from_world.apply(np.asarray(p, dtype=np.float64).reshape(3))
    z = float(xc[2])
    if z <= DEPTH_EPS:
        raise NonPositiveDepthError(f"point depth {z!r} is not in front of the camera")
    return np.array([k.fx * xc[0] / z + k.cx, k.fy * xc[1] / z + k.cy]), z


def project_points(k: CameraIntrinsics, cam_from_world: Pose, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised projection. Pixels of points at non-positive depth are NaN."""
    xc = cam_from_world.apply(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    z = xc[:, 2]
    ok = z > DEPTH_EPS
    safe_z = np.where(ok, z, 1.0)
    px = np.stack([k.fx * xc[:, 0] / safe_z + k.cx, k.fy * xc[:, 1] / safe_z + k.cy], axis=1)
    px[~ok] = np.nan
    return px, z


def unproject_pixel(k: CameraIntrinsics, cam_from_world: Pose, pixel, depth: float) -> np.ndarray:
    """World point that projects to ``pixel`` at camera-frame depth ``depth``."""
    u, v = float(pixel[0]), float(pixel[1])
    xc = np.array([(u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth])
    return invert_pose(cam_from_world).apply(xc)


def apply_similarity(s: SimilarityTransform, t: Trajectory) -> Trajectory:
    r = s.rotation_matrix
    poses = tuple(
        Pose(quat_multiply(s.rotation, p.rotation), s.scale * r @ p.translation + s.translation)
        for p in t.poses
    )
    return Trajectory(t.frames, poses, t.timestamps)


def transform_trajectory(g: Pose, t: Trajectory) -> Trajectory:
    """Left-multiply every pose of ``t`` by the rigid transform ``g``."""
    return Trajectory(t.frames, tuple(compose_poses(g, p) for p in t.poses), t.timestamps)
