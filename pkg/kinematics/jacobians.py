# kinematics/jacobians.py
"""
Forward kinematics and Jacobians for any frame of a KinematicChain.

All functions optionally take `transforms` (output of frame_transforms) so a
control cycle can compose the chain once and query several frames.
"""

from typing import List, Optional, Sequence

import numpy as np

from errors import ConfigError
from kinematics.chain import KinematicChain, Pose


def as_joint_vector(chain: KinematicChain, q: Sequence[float]) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (chain.n,):
        raise ConfigError(f"joint vector must have length {chain.n}, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ConfigError("joint vector contains non-finite values")
    return q


def _check_frame(chain: KinematicChain, frame: int) -> None:
    if not 0 <= frame <= chain.camera_frame:
        raise ConfigError(f"frame index {frame} out of range [0, {chain.camera_frame}]")


def frame_transforms(chain: KinematicChain, q: Sequence[float]) -> List[np.ndarray]:
    """
    Returns 4x4 base-frame transforms for frames 0..n+2
    (base, joint frames, shaft tip, camera).
    """
    q = as_joint_vector(chain, q)
    T = chain.base.as_matrix()
    out = [T]
    for joint, qi in zip(chain.joints, q):
        T = T @ joint.transform(qi)
        out.append(T)
    flange = out[-1]
    out.append(flange @ chain.tool_transform.as_matrix())
    out.append(flange @ chain.camera_mount.as_matrix())
    return out


def forward_kinematics(chain: KinematicChain, q: Sequence[float], frame: int,
                       transforms: Optional[List[np.ndarray]] = None) -> Pose:
    _check_frame(chain, frame)
    if transforms is None:
        transforms = frame_transforms(chain, q)
    return Pose.from_matrix(transforms[frame])


def _moving_joints(chain: KinematicChain, frame: int) -> int:
    # joint j (0-based) rotates about z of frame j and moves frame k iff j < k
    return min(frame, chain.n)


def position_jacobian(chain: KinematicChain, q: Sequence[float], frame: int,
                      transforms: Optional[List[np.ndarray]] = None) -> np.ndarray:
    """Column j = z_j x (p_frame - p_j); zero for joints at or after the frame."""
    _check_frame(chain, frame)
    if transforms is None:
        transforms = frame_transforms(chain, q)
    p = transforms[frame][:3, 3]
    J = np.zeros((3, chain.n))
    for j in range(_moving_joints(chain, frame)):
        Tj = transforms[j]
        J[:, j] = np.cross(Tj[:3, 2], p - Tj[:3, 3])
    return J


def geometric_jacobian(chain: KinematicChain, q: Sequence[float], frame: int,
                       transforms: Optional[List[np.ndarray]] = None) -> np.ndarray:
    """6xn base-frame Jacobian: linear rows on top, angular rows below."""
    _check_frame(chain, frame)
    if transforms is None:
        transforms = frame_transforms(chain, q)
    J = np.zeros((6, chain.n))
    J[:3] = position_jacobian(chain, q, frame, transforms)
    for j in range(_moving_joints(chain, frame)):
        J[3:, j] = transforms[j][:3, 2]
    return J


def numeric_jacobian(chain: KinematicChain, q: Sequence[float], frame: int, step: float = 1e-6) -> np.ndarray:
    """Central-difference position Jacobian. Test / audit oracle only."""
    if step <= 0:
        raise ConfigError(f"finite-difference step must be positive, got {step}")
    _check_frame(chain, frame)
    q = as_joint_vector(chain, q)
    J = np.zeros((3, chain.n))
    for j in range(chain.n):
        dq = np.zeros(chain.n)
        dq[j] = step
        p_plus = frame_transforms(chain, q + dq)[frame][:3, 3]
        p_minus = frame_transforms(chain, q - dq)[frame][:3, 3]
        J[:, j] = (p_plus - p_minus) / (2.0 * step)
    return J
