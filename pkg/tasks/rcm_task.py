# tasks/rcm_task.py
"""
Remote-center-of-motion task.

 - p_rcm: closest point of the (unclamped) shaft line to the trocar
 - e_rcm: distance trocar <-> p_rcm, p_e: unit direction from p_rcm to the trocar
 - J_rcm: 1xn row with J_rcm q_dot = p_e . d(p_rcm)/dt, so J_rcm q_dot > 0 shrinks e_rcm
 - shaft_param: insertion of p_rcm along the shaft, J_shaft its 1xn rate
"""

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from errors import GeometryError
from kinematics.chain import KinematicChain
from kinematics.jacobians import frame_transforms, position_jacobian

DEGENERATE_EPS = 1e-9


@dataclass(frozen=True)
class TrocarConfig:
    p_trocar: np.ndarray

    def __post_init__(self):
        p = np.array(self.p_trocar, dtype=float)
        if p.shape != (3,) or not np.all(np.isfinite(p)):
            raise GeometryError(f"trocar must be a finite 3-vector, got {self.p_trocar!r}")
        p.setflags(write=False)
        object.__setattr__(self, "p_trocar", p)


@dataclass(frozen=True)
class RcmState:
    p_pre: np.ndarray
    p_tip: np.ndarray
    p_s_hat: np.ndarray
    p_r: np.ndarray
    p_rcm: np.ndarray
    e_rcm: float
    p_e_hat: np.ndarray
    shaft_param: float
    shaft_length: float
    degenerate: bool
    j_rcm: Optional[np.ndarray] = None
    j_shaft: Optional[np.ndarray] = None

    @property
    def outside_shaft(self) -> bool:
        return self.shaft_param < 0.0 or self.shaft_param > self.shaft_length


def compute_rcm_state(chain: KinematicChain, q: Sequence[float], trocar: TrocarConfig,
                      transforms: Optional[List[np.ndarray]] = None) -> RcmState:
    if transforms is None:
        transforms = frame_transforms(chain, q)
    p_pre = transforms[chain.pre_rcm_frame][:3, 3].copy()
    p_tip = transforms[chain.shaft_tip_frame][:3, 3].copy()

    p_s = p_tip - p_pre
    length = float(np.linalg.norm(p_s))
    if length <= DEGENERATE_EPS:
        raise GeometryError(f"degenerate shaft: pre-RCM frame and tip coincide (|p_s|={length:.3e} m)")
    s_hat = p_s / length

    p_r = trocar.p_trocar - p_pre
    t = float(p_r @ s_hat)
    p_rcm = p_pre + t * s_hat
    diff = trocar.p_trocar - p_rcm
    e_rcm = float(np.linalg.norm(diff))

    degenerate = e_rcm <= DEGENERATE_EPS
    p_e = np.zeros(3) if degenerate else diff / e_rcm
    return RcmState(
        p_pre=p_pre, p_tip=p_tip, p_s_hat=s_hat, p_r=p_r, p_rcm=p_rcm, e_rcm=e_rcm,
        p_e_hat=p_e, shaft_param=t, shaft_length=length, degenerate=degenerate,
    )


def _shaft_jacobians(chain: KinematicChain, q: Sequence[float], state: RcmState,
                     transforms: Optional[List[np.ndarray]]) -> Tuple[np.ndarray, np.ndarray]:
    """(J_pre, ds/dq) for the unit shaft direction s."""
    if transforms is None:
        transforms = frame_transforms(chain, q)
    J_pre = position_jacobian(chain, q, chain.pre_rcm_frame, transforms)
    J_post = position_jacobian(chain, q, chain.shaft_tip_frame, transforms)
    s = state.p_s_hat
    P = np.eye(3) - np.outer(s, s)
    return J_pre, (P @ (J_post - J_pre)) / state.shaft_length


def rcm_point_jacobian(chain: KinematicChain, q: Sequence[float], state: RcmState,
                       transforms: Optional[List[np.ndarray]] = None) -> np.ndarray:
    """3xn Jacobian of p_rcm: (I - ss^T) J_pre + (s p_r^T + (p_r.s) I) ds/dq."""
    J_pre, ds_dq = _shaft_jacobians(chain, q, state, transforms)
    s = state.p_s_hat
    P = np.eye(3) - np.outer(s, s)
    return P @ J_pre + (np.outer(s, state.p_r) + state.shaft_param * np.eye(3)) @ ds_dq


def shaft_param_jacobian(chain: KinematicChain, q: Sequence[float], state: RcmState,
                         transforms: Optional[List[np.ndarray]] = None) -> np.ndarray:
    """1xn rate of shaft_param = p_r . s:  -s^T J_pre + p_r^T ds/dq."""
    J_pre, ds_dq = _shaft_jacobians(chain, q, state, transforms)
    return (-state.p_s_hat @ J_pre + state.p_r @ ds_dq).reshape(1, -1)


def rcm_jacobian(chain: KinematicChain, q: Sequence[float], state: RcmState,
                 transforms: Optional[List[np.ndarray]] = None,
                 direction: Optional[np.ndarray] = None) -> np.ndarray:
    """
    1xn RCM task Jacobian p_e^T J_prcm.
    `direction` replaces p_e (the control loop passes the previous cycle's p_e
    when the current state is degenerate).
    """
    if direction is None:
        if state.degenerate:
            raise GeometryError("RCM error direction undefined (e_rcm below 1e-9 m)")
        direction = state.p_e_hat
    return (np.asarray(direction, dtype=float) @ rcm_point_jacobian(chain, q, state, transforms)).reshape(1, -1)


def rcm_state_with_jacobian(chain: KinematicChain, q: Sequence[float], trocar: TrocarConfig,
                            previous_direction: Optional[np.ndarray] = None,
                            transforms: Optional[List[np.ndarray]] = None) -> RcmState:
    """
    Control-loop entry: state plus J_rcm. On a degenerate state the previous
    direction is reused, or a zero row when none is known.
    """
    if transforms is None:
        transforms = frame_transforms(chain, q)
    state = compute_rcm_state(chain, q, trocar, transforms)
    if not state.degenerate:
        J = rcm_jacobian(chain, q, state, transforms)
    elif previous_direction is not None and np.linalg.norm(previous_direction) > 0.0:
        J = rcm_jacobian(chain, q, state, transforms, direction=previous_direction)
    else:
        J = np.zeros((1, chain.n))
    return replace(state, j_rcm=J, j_shaft=shaft_param_jacobian(chain, q, state, transforms))
