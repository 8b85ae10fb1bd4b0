# kinematics/chain.py
"""
Serial revolute chain description (standard DH).

Frame convention:
 - frame 0 is the robot base, placed in the world by `base` (identity by default)
 - frame i is the frame after joint i (1..n)
 - frame n+1 is the shaft tip (frame n composed with tool_transform)
 - frame n+2 is the camera optical frame (frame n composed with camera_mount)

Per joint, standard DH: T_i = Rz(q_i + theta_offset) Tz(d) Tx(a) Rx(alpha).
"""

import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from errors import ConfigError

ORTHONORMAL_TOL = 1e-10


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------
# Pose
# ---------------------------------------------------------------------
@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray
    position: np.ndarray

    def __post_init__(self):
        rot = _frozen(self.rotation)
        pos = _frozen(self.position)
        if rot.shape != (3, 3) or pos.shape != (3,):
            raise ConfigError(f"pose needs a 3x3 rotation and a 3-vector, got {rot.shape} / {pos.shape}")
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(pos))):
            raise ConfigError("pose contains non-finite values")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > ORTHONORMAL_TOL or abs(np.linalg.det(rot) - 1.0) > ORTHONORMAL_TOL:
            raise ConfigError("pose rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "position", pos)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_quat(cls, position: Sequence[float], quat_xyzw: Sequence[float]) -> "Pose":
        quat = np.asarray(quat_xyzw, dtype=float)
        if quat.shape != (4,) or abs(np.linalg.norm(quat) - 1.0) > 1e-6:
            raise ConfigError(f"quaternion must be a unit 4-vector (x, y, z, w), got {list(quat_xyzw)}")
        return cls(Rotation.from_quat(quat).as_matrix(), np.asarray(position, dtype=float))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose":
        return cls(T[:3, :3], T[:3, 3])

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.position
        return T


# ---------------------------------------------------------------------
# Joints
# ---------------------------------------------------------------------
@dataclass(frozen=True)
class JointSpec:
    a: float
    alpha: float
    d: float
    theta_offset: float
    q_min: float
    q_max: float
    kind: str = "revolute"

    def __post_init__(self):
        if self.kind != "revolute":
            raise ConfigError(f"unsupported joint kind {self.kind!r} (only 'revolute')")
        values = (self.a, self.alpha, self.d, self.theta_offset, self.q_min, self.q_max)
        if not all(math.isfinite(float(v)) for v in values):
            raise ConfigError("joint parameters must be finite")
        if not self.q_min < self.q_max:
            raise ConfigError(f"joint limits need q_min < q_max, got [{self.q_min}, {self.q_max}]")

    def transform(self, q: float) -> np.ndarray:
        theta = q + self.theta_offset
        ct, st = math.cos(theta), math.sin(theta)
        ca, sa = math.cos(self.alpha), math.sin(self.alpha)
        return np.array([
            [ct, -st * ca, st * sa, self.a * ct],
            [st, ct * ca, -ct * sa, self.a * st],
            [0.0, sa, ca, self.d],
            [0.0, 0.0, 0.0, 1.0],
        ])


# ---------------------------------------------------------------------
# Chain
# ---------------------------------------------------------------------
@dataclass(frozen=True)
class KinematicChain:
    joints: Tuple[JointSpec, ...]
    pre_rcm_frame: int
    tool_transform: Pose
    camera_mount: Pose = field(default_factory=Pose.identity)
    base: Pose = field(default_factory=Pose.identity)

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        if len(self.joints) < 1:
            raise ConfigError("chain needs at least one joint")
        if not 0 <= self.pre_rcm_frame <= self.n:
            raise ConfigError(f"pre_rcm_frame must lie in [0, {self.n}], got {self.pre_rcm_frame}")

    @property
    def n(self) -> int:
        return len(self.joints)

    @property
    def shaft_tip_frame(self) -> int:
        return self.n + 1

    @property
    def camera_frame(self) -> int:
        return self.n + 2

    @property
    def q_min(self) -> np.ndarray:
        return np.array([j.q_min for j in self.joints])

    @property
    def q_max(self) -> np.ndarray:
        return np.array([j.q_max for j in self.joints])


# 6R arm + spherical wrist, ~0.78 m reach; the endoscope hangs 0.30 m past the flange
DEFAULT_DH: List[Tuple[float, float, float, float, float]] = [
    # a,     alpha,         d,     q_min,   q_max
    (0.0,   math.pi / 2,  0.35,  -2.967,  2.967),
    (0.35,  0.0,          0.0,   -2.094,  2.094),
    (0.0,   math.pi / 2,  0.0,   -2.182,  2.705),
    (0.0,  -math.pi / 2,  0.35,  -4.712,  4.712),
    (0.0,   math.pi / 2,  0.0,   -2.094,  2.094),
    (0.0,   0.0,          0.08,  -6.283,  6.283),
]
DEFAULT_SHAFT_LENGTH = 0.30


def default_chain() -> KinematicChain:
    joints = [JointSpec(a=a, alpha=al, d=d, theta_offset=0.0, q_min=lo, q_max=hi)
              for a, al, d, lo, hi in DEFAULT_DH]
    tip = Pose(np.eye(3), np.array([0.0, 0.0, DEFAULT_SHAFT_LENGTH]))
    return KinematicChain(joints=tuple(joints), pre_rcm_frame=len(joints), tool_transform=tip, camera_mount=tip)
