# tasks/visual_task.py
"""
Pinhole camera + point-feature visual task.

Camera optical frame: z along the optical axis, x to the right (u), y down (v).
e_vis is the centered pixel position (u - c_u, v - c_v) of the tracked marker.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigError, GeometryError
from kinematics.chain import KinematicChain, Pose
from kinematics.jacobians import frame_transforms, geometric_jacobian

MIN_DEPTH = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    f: float
    c_u: float
    c_v: float
    width: float
    height: float

    def __post_init__(self):
        if not self.f > 0:
            raise ConfigError(f"focal length must be positive, got {self.f}")
        if not (0 <= self.c_u <= self.width and 0 <= self.c_v <= self.height):
            raise ConfigError(
                f"principal point ({self.c_u}, {self.c_v}) outside the {self.width}x{self.height} image")

    @classmethod
    def from_fov(cls, fov_deg: float, width: float, height: float,
                 c_u: Optional[float] = None, c_v: Optional[float] = None) -> "CameraIntrinsics":
        """Square-pixel intrinsics from a horizontal field of view."""
        if not 0 < fov_deg < 180:
            raise ConfigError(f"fov_deg must lie in (0, 180), got {fov_deg}")
        f = width / (2.0 * math.tan(math.radians(fov_deg) / 2.0))
        return cls(f=f, c_u=width / 2.0 if c_u is None else c_u,
                   c_v=height / 2.0 if c_v is None else c_v, width=width, height=height)

    def contains(self, u: float, v: float) -> bool:
        return 0.0 <= u <= self.width and 0.0 <= v <= self.height


@dataclass(frozen=True)
class Marker:
    id: int
    p_world: np.ndarray

    def __post_init__(self):
        p = np.array(self.p_world, dtype=float)
        if p.shape != (3,) or not np.all(np.isfinite(p)):
            raise ConfigError(f"marker {self.id} position must be a finite 3-vector")
        p.setflags(write=False)
        object.__setattr__(self, "p_world", p)


@dataclass(frozen=True)
class ImagePoint:
    u: float
    v: float


def project_point(R: np.ndarray, t: np.ndarray, intrinsics: CameraIntrinsics,
                 p_world: np.ndarray) -> Tuple[ImagePoint, float]:
    X, Y, Z = R.T @ (p_world - t)
    if Z <= MIN_DEPTH:
        raise GeometryError(f"marker behind the camera (depth {Z:.4g} m)")
    return ImagePoint(intrinsics.c_u + intrinsics.f * X / Z, intrinsics.c_v + intrinsics.f * Y / Z), float(Z)


def project(camera_pose: Pose, intrinsics: CameraIntrinsics, marker: Marker) -> Tuple[ImagePoint, float]:
    """Returns the marker's pixel position and its depth along the optical axis."""
    return project_point(camera_pose.rotation, camera_pose.position, intrinsics, marker.p_world)


def interaction_matrix(pt: ImagePoint, depth: float, intrinsics: CameraIntrinsics) -> np.ndarray:
    if depth <= MIN_DEPTH:
        raise GeometryError(f"interaction matrix needs positive depth, got {depth:.4g} m")
    f, Z = intrinsics.f, depth
    u = pt.u - intrinsics.c_u
    v = pt.v - intrinsics.c_v
    return np.array([
        [-f / Z, 0.0, u / Z, u * v / f, -(f * f + u * u) / f, v],
        [0.0, -f / Z, v / Z, (f * f + v * v) / f, -u * v / f, -u],
    ])


def visual_jacobian(chain: KinematicChain, q: Sequence[float], intrinsics: CameraIntrinsics, marker: Marker,
                    transforms: Optional[List[np.ndarray]] = None) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    Returns (J_vis 2xn, e_vis px, depth m) with J_vis = L . blockdiag(R_c^T, R_c^T) . J_geom(camera).
    """
    if transforms is None:
        transforms = frame_transforms(chain, q)
    T_cam = transforms[chain.camera_frame]
    R = T_cam[:3, :3]
    pt, depth = project_point(R, T_cam[:3, 3], intrinsics, marker.p_world)

    J_geom = geometric_jacobian(chain, q, chain.camera_frame, transforms)
    J_cam = np.vstack([R.T @ J_geom[:3], R.T @ J_geom[3:]])
    J_vis = interaction_matrix(pt, depth, intrinsics) @ J_cam
    e_vis = np.array([pt.u - intrinsics.c_u, pt.v - intrinsics.c_v])
    return J_vis, e_vis, depth
