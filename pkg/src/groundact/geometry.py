"""Camera models, pixel<->3D projection, and pose/rotation algebra.

Conventions used across the package:
  * Robot (world) frame: x forward, y left, z up, meters.
  * Camera frame: +Z along the optical axis, +X to the right in the image
    (pixel u), +Y down in the image (pixel v).
  * Quaternions are (w, x, y, z), unit norm, canonical sign w >= 0.
  * Euler angles are intrinsic yaw(Z)-pitch(Y)-roll(X):
    R = Rz(yaw) @ Ry(pitch) @ Rx(roll).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_QUAT_NORM_TOL = 1e-9


class BehindCamera(ValueError):
    """Point has non-positive depth in the camera frame."""


class InvalidDepth(ValueError):
    """Depth is zero, negative, or non-finite (sensors encode holes as 0)."""


def normalize_quat(q) -> np.ndarray:
    """Return q scaled to unit norm with canonical sign (w >= 0)."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("cannot normalize zero/non-finite quaternion")
    q = q / n
    if q[0] < 0.0:
        q = -q
    return q


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product a*b, canonicalized."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    q = np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )
    return normalize_quat(q)


def quat_conjugate(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return normalize_quat(np.array([q[0], -q[1], -q[2], -q[3]]))


def quat_to_matrix(q) -> np.ndarray:
    """3x3 rotation matrix for unit quaternion q = (w, x, y, z)."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(m) -> np.ndarray:
    """Inverse of quat_to_matrix (Shepperd's method), canonicalized."""
    m = np.asarray(m, dtype=np.float64)
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    return normalize_quat(q)


def rotate_vec(q, v) -> np.ndarray:
    """Rotate vector(s) v by quaternion q. v is (3,) or (N, 3)."""
    return np.asarray(v, dtype=np.float64) @ quat_to_matrix(q).T


def geodesic_angle(q1, q2) -> float:
    """Rotation angle (radians) between two unit quaternions, double-cover aware."""
    d = abs(float(np.dot(np.asarray(q1, dtype=np.float64), np.asarray(q2, dtype=np.float64))))
    return 2.0 * np.arccos(min(1.0, d))


def slerp(q0, q1, t: float) -> np.ndarray:
    """Spherical interpolation along the shorter arc; endpoints exact."""
    q0 = normalize_quat(q0)
    q1 = normalize_quat(q1)
    d = float(np.dot(q0, q1))
    if d < 0.0:
        q1 = -q1
        d = -d
    if d > 1.0 - 1e-12:
        return normalize_quat((1.0 - t) * q0 + t * q1)
    theta = np.arccos(min(1.0, d))
    s = np.sin(theta)
    return normalize_quat((np.sin((1.0 - t) * theta) / s) * q0 + (np.sin(t * theta) / s) * q1)


def euler_to_quat(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Intrinsic Z-Y-X (yaw, pitch, roll) to unit quaternion, w >= 0."""
    cy, sy = np.cos(yaw / 2), np.sin(yaw / 2)
    cp, sp = np.cos(pitch / 2), np.sin(pitch / 2)
    cr, sr = np.cos(roll / 2), np.sin(roll / 2)
    q = np.array(
        [
            cy * cp * cr + sy * sp * sr,
            cy * cp * sr - sy * sp * cr,
            cy * sp * cr + sy * cp * sr,
            sy * cp * cr - cy * sp * sr,
        ]
    )
    return normalize_quat(q)


def quat_to_euler(q) -> tuple[float, float, float]:
    """Inverse of euler_to_quat: (yaw, pitch, roll).

    At gimbal lock (|pitch| = pi/2) yaw and roll are coupled; the combined
    angle is returned in yaw with roll set to 0.
    """
    w, x, y, z = normalize_quat(q)
    sinp = 2.0 * (w * y - z * x)
    if abs(sinp) >= 1.0 - 1e-12:
        pitch = np.copysign(np.pi / 2, sinp)
        yaw = 2.0 * np.arctan2(z, w) if sinp > 0 else -2.0 * np.arctan2(z, w)
        roll = 0.0
    else:
        pitch = np.arcsin(sinp)
        yaw = np.arctan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
        roll = np.arctan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
    return float(yaw), float(pitch), float(roll)


@dataclass(frozen=True)
class Pose:
    """Position (m) plus unit quaternion orientation in the robot frame."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64).reshape(3)
        q = np.asarray(self.orientation, dtype=np.float64).reshape(4)
        n = np.linalg.norm(q)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"orientation must be near unit norm, got |q|={n}")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "orientation", normalize_quat(q))

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def from_euler(position, yaw: float, pitch: float, roll: float) -> "Pose":
        return Pose(np.asarray(position, dtype=np.float64), euler_to_quat(yaw, pitch, roll))

    def to_euler(self) -> tuple[float, float, float]:
        return quat_to_euler(self.orientation)

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 transform robot_from_local."""
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.orientation)
        m[:3, 3] = self.position
        return m

    def transform(self, points) -> np.ndarray:
        """Map local-frame point(s) into the robot frame."""
        return rotate_vec(self.orientation, points) + self.position

    def inverse_transform(self, points) -> np.ndarray:
        """Map robot-frame point(s) into the local frame."""
        return rotate_vec(quat_conjugate(self.orientation), np.asarray(points) - self.position)

    def compose(self, other: "Pose") -> "Pose":
        """self @ other: first apply other, then self."""
        return Pose(
            self.transform(other.position),
            quat_multiply(self.orientation, other.orientation),
        )

    def inverse(self) -> "Pose":
        qi = quat_conjugate(self.orientation)
        return Pose(-rotate_vec(qi, self.position), qi)

    def approach_axis(self) -> np.ndarray:
        """Tool approach direction: the gripper's local +Z in the robot frame."""
        return rotate_vec(self.orientation, np.array([0.0, 0.0, 1.0]))

    def to_list(self) -> list[float]:
        return [*map(float, self.position), *map(float, self.orientation)]

    @staticmethod
    def from_list(vals) -> "Pose":
        vals = list(map(float, vals))
        return Pose(np.array(vals[:3]), np.array(vals[3:7]))


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


@dataclass(frozen=True)
class CameraExtrinsics:
    """Pose of the camera in the robot base frame."""

    pose: Pose = field(default_factory=Pose.identity)

    @staticmethod
    def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> "CameraExtrinsics":
        """Camera at `eye` with +Z pointing at `target`, +Y roughly opposing `up`.

        (+Y of the camera frame is image-down, hence the sign flip on `up`.)
        """
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd = fwd / np.linalg.norm(fwd)
        up = np.asarray(up, dtype=np.float64)
        right = np.cross(fwd, up)
        n = np.linalg.norm(right)
        if n < 1e-9:
            right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
            n = np.linalg.norm(right)
        right = right / n
        down = np.cross(fwd, right)
        m = np.stack([right, down, fwd], axis=1)  # columns: camera x, y, z in world
        return CameraExtrinsics(Pose(eye, matrix_to_quat(m)))


def project(point, intr: CameraIntrinsics, extr: CameraExtrinsics) -> tuple[float, float, float]:
    """Project a robot-frame point to pixel (u, v) plus camera-frame depth.

    Raises BehindCamera if the point has non-positive camera-frame Z.
    """
    pc = extr.pose.inverse_transform(np.asarray(point, dtype=np.float64))
    z = float(pc[2])
    if z <= 0.0:
        raise BehindCamera(f"point depth {z} <= 0")
    u = intr.fx * pc[0] / z + intr.cx
    v = intr.fy * pc[1] / z + intr.cy
    return float(u), float(v), z


def deproject(pixel, depth: float, intr: CameraIntrinsics, extr: CameraExtrinsics) -> np.ndarray:
    """Invert project: pixel (u, v) at camera depth -> robot-frame 3D point."""
    if not np.isfinite(depth) or depth <= 0.0:
        raise InvalidDepth(f"depth {depth} is not a positive finite value")
    u, v = float(pixel[0]), float(pixel[1])
    pc = np.array([(u - intr.cx) * depth / intr.fx, (v - intr.cy) * depth / intr.fy, depth])
    return extr.pose.transform(pc)


def deproject_grid(depth_map, intr: CameraIntrinsics, extr: CameraExtrinsics):
    """Deproject a whole depth map; returns (points (N,3), valid_mask (H,W)).

    Pixels with depth <= 0 or non-finite are treated as holes.
    """
    d = np.asarray(depth_map, dtype=np.float64)
    if d.shape != (intr.height, intr.width):
        raise ValueError(f"depth map shape {d.shape} != ({intr.height}, {intr.width})")
    valid = np.isfinite(d) & (d > 0.0)
    vs, us = np.nonzero(valid)
    z = d[vs, us]
    x = (us - intr.cx) * z / intr.fx
    y = (vs - intr.cy) * z / intr.fy
    pc = np.stack([x, y, z], axis=1)
    return extr.pose.transform(pc), valid
