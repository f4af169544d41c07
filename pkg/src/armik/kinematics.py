"""Denavit-Hartenberg forward kinematics for open chains of rotational joints.

Angle unit at every API boundary is degrees (lengths in cm); radians appear
only inside trigonometric evaluation. All functions are pure and safe to call
concurrently.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

DEG2RAD = math.pi / 180.0

# Capsule radius used for the self-collision test, cm.
LINK_RADIUS_CM = 2.0

# Movement range shared by every joint of the generated families, degrees.
THETA_RANGE = (0.0, 360.0)

_GIMBAL_EPS = 1e-9
_ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class DHJoint:
    """One DH table row: theta_off/alpha in degrees, a/d in cm."""

    theta_off: float
    a: float
    d: float
    alpha: float

    def __post_init__(self):
        if self.a < 0.0 or self.d < 0.0:
            raise ValueError(f"link translations must be non-negative, got a={self.a}, d={self.d}")


@dataclass(frozen=True)
class ManipulatorConfig:
    """Ordered DH rows describing one concrete manipulator."""

    joints: tuple[DHJoint, ...]

    def __post_init__(self):
        if len(self.joints) == 0:
            raise ValueError("a manipulator needs at least one joint")

    @property
    def dof(self) -> int:
        return len(self.joints)

    @property
    def reach_cm(self) -> float:
        """Total chain length, the upper bound on end-effector distance."""
        return float(sum(j.a + j.d for j in self.joints))

    def to_dict(self) -> dict:
        return {
            "dof": self.dof,
            "joints": [
                {
                    "theta_range": list(THETA_RANGE),
                    "theta_off": j.theta_off,
                    "a": j.a,
                    "d": j.d,
                    "alpha": j.alpha,
                }
                for j in self.joints
            ],
        }

    @staticmethod
    def from_dict(data: dict) -> "ManipulatorConfig":
        joints = tuple(
            DHJoint(theta_off=row["theta_off"], a=row["a"], d=row["d"], alpha=row["alpha"])
            for row in data["joints"]
        )
        config = ManipulatorConfig(joints)
        if data.get("dof", config.dof) != config.dof:
            raise ValueError("dof field disagrees with the number of joint rows")
        return config

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @staticmethod
    def load(path) -> "ManipulatorConfig":
        return ManipulatorConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class Pose:
    """End-effector state: position (cm) and extrinsic x-y-z Euler angles (deg)."""

    position: np.ndarray
    orientation: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.orientation])


class CollisionVerdict(Enum):
    FREE = "collision-free"
    GROUND = "ground-collision"
    SELF = "self-collision"

    @property
    def collides(self) -> bool:
        return self is not CollisionVerdict.FREE


def dh_matrix(joint: DHJoint, theta_deg: float) -> np.ndarray:
    """4x4 transform Rot_z(theta+theta_off) @ Trans_z(d) @ Trans_x(a) @ Rot_x(alpha)."""
    if not math.isfinite(theta_deg):
        raise ValueError(f"joint angle must be finite, got {theta_deg}")
    th = (theta_deg + joint.theta_off) * DEG2RAD
    al = joint.alpha * DEG2RAD
    ct, st = math.cos(th), math.sin(th)
    ca, sa = math.cos(al), math.sin(al)
    return np.array(
        [
            [ct, -st * ca, st * sa, joint.a * ct],
            [st, ct * ca, -ct * sa, joint.a * st],
            [0.0, sa, ca, joint.d],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def forward_kinematics(config: ManipulatorConfig, theta_deg) -> tuple[Pose, list[np.ndarray]]:
    """End-effector pose plus the cumulative transform at every joint.

    The cumulative transforms feed the collision check; the pose is read from
    the final product (translation column and Euler extraction of the
    rotation block).
    """
    theta = np.asarray(theta_deg, dtype=float)
    if theta.shape != (config.dof,):
        raise ValueError(f"expected {config.dof} joint angles, got shape {theta.shape}")
    transforms: list[np.ndarray] = []
    T = np.eye(4)
    for joint, th in zip(config.joints, theta):
        T = T @ dh_matrix(joint, float(th))
        transforms.append(T)
    pose = Pose(position=T[:3, 3].copy(), orientation=euler_from_rotation(T[:3, :3]))
    return pose, transforms


def _wrap_half_open(deg):
    """Wrap angles into (-180, 180]."""
    return 180.0 - (180.0 - np.asarray(deg, dtype=float)) % 360.0


def euler_from_rotation(R) -> np.ndarray:
    """Extrinsic x-y-z (roll, pitch, yaw) angles of a rotation matrix, degrees.

    At the pitch = +-90 deg singularity roll/yaw are not separable; the
    canonical branch fixes yaw = 0 and attributes the remaining rotation to
    roll.
    """
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {R.shape}")
    if np.linalg.norm(R.T @ R - np.eye(3)) > _ORTHO_TOL:
        raise ValueError("matrix is not orthonormal")
    sy = -R[2, 0]
    cy = math.hypot(R[0, 0], R[1, 0])
    if cy > _GIMBAL_EPS:
        roll = math.atan2(R[2, 1], R[2, 2])
        pitch = math.atan2(sy, cy)
        yaw = math.atan2(R[1, 0], R[0, 0])
    elif sy > 0.0:
        roll = math.atan2(R[0, 1], R[0, 2])
        pitch = 0.5 * math.pi
        yaw = 0.0
    else:
        roll = math.atan2(-R[0, 1], -R[0, 2])
        pitch = -0.5 * math.pi
        yaw = 0.0
    return _wrap_half_open(np.array([roll, pitch, yaw]) / DEG2RAD)


def rotation_from_euler(euler_deg) -> np.ndarray:
    """Inverse of euler_from_rotation: Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    roll, pitch, yaw = (np.asarray(euler_deg, dtype=float) * DEG2RAD).tolist()
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cyw, syw = math.cos(yaw), math.sin(yaw)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rz = np.array([[cyw, -syw, 0.0], [syw, cyw, 0.0], [0.0, 0.0, 1.0]])
    return rz @ ry @ rx


def _segment_distance(p1, q1, p2, q2) -> float:
    """Smallest distance between segments [p1,q1] and [p2,q2]."""
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = float(d1 @ d1)
    e = float(d2 @ d2)
    f = float(d2 @ r)
    if a <= 1e-12 and e <= 1e-12:
        return float(np.linalg.norm(r))
    if a <= 1e-12:
        s = 0.0
        t = min(max(f / e, 0.0), 1.0)
    else:
        c = float(d1 @ r)
        if e <= 1e-12:
            t = 0.0
            s = min(max(-c / a, 0.0), 1.0)
        else:
            b = float(d1 @ d2)
            denom = a * e - b * b
            s = min(max((b * f - c * e) / denom, 0.0), 1.0) if denom > 1e-12 else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = min(max(-c / a, 0.0), 1.0)
            elif t > 1.0:
                t = 1.0
                s = min(max((b - c) / a, 0.0), 1.0)
    gap = (p1 + s * d1) - (p2 + t * d2)
    return float(np.linalg.norm(gap))


def joint_origins(transforms: list[np.ndarray]) -> np.ndarray:
    """Base origin plus the translation of every cumulative transform, (dof+1, 3)."""
    pts = np.zeros((len(transforms) + 1, 3))
    for i, T in enumerate(transforms):
        pts[i + 1] = T[:3, 3]
    return pts


def check_collision(config: ManipulatorConfig, transforms: list[np.ndarray]) -> CollisionVerdict:
    """Classify a configuration as ground-colliding, self-colliding, or free.

    Links are capsules of radius LINK_RADIUS_CM around the segments between
    consecutive joint origins. The ground is the plane z = 0; the first link
    (the base column) is exempt from the ground test. Two non-adjacent link
    capsules collide when their segments come within twice the radius.
    """
    if len(transforms) != config.dof:
        raise ValueError(f"expected {config.dof} cumulative transforms, got {len(transforms)}")
    pts = joint_origins(transforms)
    n_links = config.dof
    # Every point of links 2..n lies on the segments over pts[1:].
    if n_links >= 2 and float(pts[1:, 2].min()) < 0.0:
        return CollisionVerdict.GROUND
    for i in range(1, n_links + 1):
        for j in range(i + 2, n_links + 1):
            dist = _segment_distance(pts[i - 1], pts[i], pts[j - 1], pts[j])
            if dist < 2.0 * LINK_RADIUS_CM:
                return CollisionVerdict.SELF
    return CollisionVerdict.FREE
