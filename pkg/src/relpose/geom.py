"""Rotation and rigid-transform algebra.

Conventions, fixed repo-wide:
  - quaternions are stored (w, x, y, z) and follow the Hamilton convention;
  - poses are camera-to-world: the rotation maps camera-frame vectors into
    the world frame and the translation is the camera center in the world.

Everything here is immutable after construction; no function mutates its
arguments.
"""

import math
from dataclasses import dataclass, field

import numpy as np


class DegenerateInput(ValueError):
    """Raised when an alignment problem is under-determined."""


@dataclass(frozen=True)
class UnitQuaternion:
    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)
        if n < 1e-12:
            raise ValueError("cannot normalize a near-zero quaternion")
        object.__setattr__(self, "w", self.w / n)
        object.__setattr__(self, "x", self.x / n)
        object.__setattr__(self, "y", self.y / n)
        object.__setattr__(self, "z", self.z / n)

    @staticmethod
    def identity():
        return UnitQuaternion(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_axis_angle(cls, axis, angle_rad):
        axis = np.asarray(axis, dtype=float)
        n = np.linalg.norm(axis)
        if n < 1e-12:
            raise ValueError("axis must be nonzero")
        axis = axis / n
        half = 0.5 * angle_rad
        s = math.sin(half)
        return cls(math.cos(half), s * axis[0], s * axis[1], s * axis[2])

    @classmethod
    def from_rotvec(cls, rotvec):
        """Exponential map: rotation-vector (axis * angle) to quaternion."""
        rotvec = np.asarray(rotvec, dtype=float)
        angle = float(np.linalg.norm(rotvec))
        if angle < 1e-12:
            # first-order expansion keeps the map smooth through zero
            return cls(1.0, 0.5 * rotvec[0], 0.5 * rotvec[1], 0.5 * rotvec[2])
        return cls.from_axis_angle(rotvec, angle)

    @classmethod
    def from_matrix(cls, R):
        """Shepperd's method for rotation-matrix to quaternion conversion."""
        R = np.asarray(R, dtype=float)
        t = np.trace(R)
        if t > 0:
            s = math.sqrt(t + 1.0) * 2.0
            return cls(0.25 * s, (R[2, 1] - R[1, 2]) / s,
                       (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s)
        i = int(np.argmax(np.diag(R)))
        if i == 0:
            s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
            return cls((R[2, 1] - R[1, 2]) / s, 0.25 * s,
                       (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s)
        if i == 1:
            s = math.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2]) * 2.0
            return cls((R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s,
                       0.25 * s, (R[1, 2] + R[2, 1]) / s)
        s = math.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2]) * 2.0
        return cls((R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
                   (R[1, 2] + R[2, 1]) / s, 0.25 * s)

    def as_array(self):
        return np.array([self.w, self.x, self.y, self.z])

    def conjugate(self):
        return UnitQuaternion(self.w, -self.x, -self.y, -self.z)

    def to_matrix(self):
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def to_rotvec(self):
        """Log map: quaternion to rotation-vector (axis * angle)."""
        vn = math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)
        w = self.w
        if vn < 1e-12:
            return np.zeros(3)
        angle = 2.0 * math.atan2(vn, w) if w >= 0 else 2.0 * math.atan2(vn, -w)
        axis = np.array([self.x, self.y, self.z]) / vn
        if w < 0:
            axis = -axis
        return axis * angle


def quat_multiply(a: UnitQuaternion, b: UnitQuaternion) -> UnitQuaternion:
    """Hamilton product a ⊗ b, renormalized."""
    return UnitQuaternion(
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    )


def quat_inverse(q: UnitQuaternion) -> UnitQuaternion:
    return q.conjugate()


def quat_rotate(q: UnitQuaternion, v):
    """Rotate a 3-vector by the quaternion (q v q*)."""
    v = np.asarray(v, dtype=float)
    w, x, y, z = q.w, q.x, q.y, q.z
    # t = 2 (u x v), v' = v + w t + u x t
    tx = 2.0 * (y * v[2] - z * v[1])
    ty = 2.0 * (z * v[0] - x * v[2])
    tz = 2.0 * (x * v[1] - y * v[0])
    return np.array([
        v[0] + w * tx + (y * tz - z * ty),
        v[1] + w * ty + (z * tx - x * tz),
        v[2] + w * tz + (x * ty - y * tx),
    ])


def quat_geodesic_deg(a: UnitQuaternion, b: UnitQuaternion) -> float:
    """Geodesic angle between two rotations in degrees, in [0, 180].

    Computed via atan2 of the relative quaternion's vector/scalar parts,
    which stays accurate near zero where acos loses precision.  Invariant
    under the quaternion double cover (a vs -a).
    """
    r = quat_multiply(a.conjugate(), b)
    vn = math.sqrt(r.x * r.x + r.y * r.y + r.z * r.z)
    angle = 2.0 * math.atan2(vn, abs(r.w))
    return math.degrees(angle)


@dataclass(frozen=True)
class Pose:
    rotation: UnitQuaternion
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        t = np.array(self.translation, dtype=float)
        if t.shape != (3,):
            raise ValueError("translation must be a 3-vector")
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity():
        return Pose(UnitQuaternion.identity(), np.zeros(3))


def pose_compose(a: Pose, b: Pose) -> Pose:
    return Pose(quat_multiply(a.rotation, b.rotation),
                a.translation + quat_rotate(a.rotation, b.translation))


def pose_inverse(p: Pose) -> Pose:
    rinv = p.rotation.conjugate()
    return Pose(rinv, -quat_rotate(rinv, p.translation))


def pose_relative(a: Pose, b: Pose) -> Pose:
    """Relative transform a -> b, i.e. a^-1 b."""
    return pose_compose(pose_inverse(a), b)


@dataclass(frozen=True)
class Sim3Alignment:
    scale: float
    rotation: UnitQuaternion
    translation: np.ndarray

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        t = np.array(self.translation, dtype=float)
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)

    def apply(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        R = self.rotation.to_matrix()
        return self.scale * points @ R.T + self.translation


def umeyama_sim3(source, target, with_scale=True) -> Sim3Alignment:
    """Least-squares similarity transform mapping source points onto target.

    SVD of the 3x3 cross-covariance; the reflection case is handled by
    sign-flipping the smallest singular direction.  with_scale=False gives
    the SE(3) (rigid) variant with scale pinned to 1.
    """
    src = np.asarray(source, dtype=float)
    dst = np.asarray(target, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise DegenerateInput("point sets must both be N x 3")
    n = src.shape[0]
    if n < 3:
        raise DegenerateInput("need at least 3 point pairs")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d
    var_s = (xs ** 2).sum() / n
    if var_s < 1e-18:
        raise DegenerateInput("source points have zero variance")
    cov = xd.T @ xs / n
    U, d, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    scale = float(np.trace(np.diag(d) @ S) / var_s) if with_scale else 1.0
    if scale <= 0:
        raise DegenerateInput("degenerate geometry produced non-positive scale")
    t = mu_d - scale * R @ mu_s
    return Sim3Alignment(scale, UnitQuaternion.from_matrix(R), t)
