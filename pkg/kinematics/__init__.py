from kinematics.chain import JointSpec, Pose, KinematicChain, default_chain
from kinematics.jacobians import (
    frame_transforms,
    forward_kinematics,
    position_jacobian,
    geometric_jacobian,
    numeric_jacobian,
    as_joint_vector,
)

__all__ = [
    "JointSpec",
    "Pose",
    "KinematicChain",
    "default_chain",
    "frame_transforms",
    "forward_kinematics",
    "position_jacobian",
    "geometric_jacobian",
    "numeric_jacobian",
    "as_joint_vector",
]
