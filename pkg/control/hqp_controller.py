# control/hqp_controller.py
"""
Two-level hierarchical QP controller for a robot-held endoscope.

Level 1: RCM task (distance shaft <-> trocar) with slack-relaxed joint-velocity limits.
Level 2: visual task (pixel error of the tracked marker) solved in the null space of
         level 1, with the same limits applied to the composed velocity. An optional
         insertion-hold row keeps the shaft depth at the trocar near its initial value.
Result:  qdot_sol = N1 qdot2 + qdot1.

Also hosts the classical pseudoinverse priority scheme ("pinv" controller) used as
a comparison baseline.

Failure ladder:
 - level 2 not solved -> RCM-only motion (qdot1)
 - level 1 not solved -> zero velocity
"""

import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigError
from kinematics.chain import KinematicChain
from kinematics.jacobians import as_joint_vector, frame_transforms
from qp.qp_solver import ActiveSetQpSolver, QpProblem, QpSettings
from tasks.rcm_task import RcmState, TrocarConfig, rcm_state_with_jacobian
from tasks.visual_task import CameraIntrinsics, Marker, visual_jacobian

logger = logging.getLogger("HQP")

CONTROLLER_MODES = ("hqp", "pinv")
STATUS_SKIPPED = "Skipped"
STATUS_PINV = "Pinv"

Limits = Tuple[np.ndarray, np.ndarray]


def default_k_rcm(dt: float) -> float:
    return min(0.8 / dt, 200.0)


@dataclass(frozen=True)
class HqpGains:
    k_rcm: float = 200.0
    k_vis: float = 2.0
    svd_tolerance: float = 1e-8
    k_damp: float = 0.0
    w_ins: float = 0.0
    k_ins: float = 2.0

    def __post_init__(self):
        if not (self.k_rcm > 0 and self.k_vis > 0):
            raise ConfigError(f"gains must be positive (k_rcm={self.k_rcm}, k_vis={self.k_vis})")
        if not self.svd_tolerance > 0:
            raise ConfigError(f"svd_tolerance must be positive, got {self.svd_tolerance}")
        if self.k_damp < 0:
            raise ConfigError(f"k_damp must be non-negative, got {self.k_damp}")
        if self.w_ins < 0 or not self.k_ins > 0:
            raise ConfigError(f"insertion hold needs w_ins >= 0 and k_ins > 0 (w_ins={self.w_ins}, k_ins={self.k_ins})")

    @classmethod
    def for_dt(cls, dt: float, **overrides) -> "HqpGains":
        overrides.setdefault("k_rcm", default_k_rcm(dt))
        return cls(**overrides)


@dataclass(frozen=True)
class LevelBlocks:
    A_bar: np.ndarray
    b_bar: np.ndarray
    Q: np.ndarray
    p: np.ndarray
    C: np.ndarray
    d: np.ndarray
    G: np.ndarray

    def as_problem(self) -> QpProblem:
        return QpProblem(Q=self.Q, p=self.p, G=self.G, h=self.d)


@dataclass(frozen=True)
class HqpResult:
    qdot1: np.ndarray
    qdot2: np.ndarray
    qdot_sol: np.ndarray
    slack1_norm: float
    slack2_norm: float
    N1: np.ndarray
    level1_time: float
    level2_time: float
    status1: str
    status2: str
    j_rcm: np.ndarray
    degraded: bool = False

    @property
    def solve_time(self) -> float:
        return self.level1_time + self.level2_time

    @property
    def priority_error(self) -> float:
        return float(abs((self.j_rcm @ (self.qdot_sol - self.qdot1))[0]))


@dataclass(frozen=True)
class CycleMeasurement:
    """Everything one control cycle reads from the kinematic model."""
    transforms: List[np.ndarray] = field(repr=False)
    rcm: RcmState
    j_vis: np.ndarray
    e_vis: np.ndarray
    depth: float
    insertion_error: float = 0.0


# ---------------------------------------------------------------------
# Pure building blocks
# ---------------------------------------------------------------------
def baseline_pinv_step(J: np.ndarray, xdot_des: Sequence[float], svd_tolerance: float = 1e-8) -> np.ndarray:
    """Minimum-norm least-squares q_dot = J^+ xdot_des with a relative singular-value cutoff."""
    J = np.atleast_2d(np.asarray(J, dtype=float))
    xdot_des = np.asarray(xdot_des, dtype=float).reshape(-1)
    U, s, Vt = np.linalg.svd(J, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(J.shape[1])
    keep = s > svd_tolerance * s[0]
    return Vt[keep].T @ ((U[:, keep].T @ xdot_des) / s[keep])


def null_space_projector(J_rcm: np.ndarray, svd_tolerance: float = 1e-8) -> np.ndarray:
    """
    N1 = I - J^T J / (J J^T) for the 1xn RCM row; identity once |J| is at or below the
    cutoff. Callers pass such a row through effective_rcm_row so level 1 sees it as zero.
    """
    j = np.asarray(J_rcm, dtype=float).reshape(-1)
    n = j.shape[0]
    sq = float(j @ j)
    if np.sqrt(sq) <= svd_tolerance:
        return np.eye(n)
    return np.eye(n) - np.outer(j, j) / sq


def effective_rcm_row(J_rcm: np.ndarray, svd_tolerance: float = 1e-8) -> np.ndarray:
    """The RCM row as the controller uses it: zero when |J_rcm| is at or below the cutoff."""
    J = np.atleast_2d(np.asarray(J_rcm, dtype=float))
    if np.linalg.norm(J) <= svd_tolerance:
        return np.zeros_like(J)
    return J


def _limit_rows(q: np.ndarray, limits: Limits, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    if dt <= 0:
        raise ConfigError(f"control period must be positive, got {dt}")
    q_min, q_max = limits
    n = q.shape[0]
    C = np.vstack([np.eye(n), -np.eye(n)])
    d = np.concatenate([(q_max - q) / dt, -(q_min - q) / dt])
    return C, d


def _stack_level(task_A: np.ndarray, task_b: np.ndarray, C_q: np.ndarray, C: np.ndarray, d: np.ndarray) -> LevelBlocks:
    rows, n = task_A.shape
    A_bar = np.zeros((rows + 2 * n, 3 * n))
    A_bar[:rows, :n] = task_A
    A_bar[rows:, n:] = np.eye(2 * n)
    b_bar = np.zeros(rows + 2 * n)
    b_bar[:rows] = task_b
    G = np.hstack([C_q, -np.eye(2 * n)])
    return LevelBlocks(A_bar=A_bar, b_bar=b_bar, Q=A_bar.T @ A_bar, p=-(A_bar.T @ b_bar), C=C, d=d, G=G)


def build_level1(J_rcm: np.ndarray, e_rcm: float, gains: HqpGains, q: Sequence[float],
                 limits: Limits, dt: float) -> LevelBlocks:
    q = np.asarray(q, dtype=float)
    n = q.shape[0]
    C, d = _limit_rows(q, limits, dt)
    task_A = np.asarray(J_rcm, dtype=float).reshape(1, n)
    task_b = np.array([gains.k_rcm * e_rcm])
    if gains.k_damp > 0:
        task_A = np.vstack([task_A, np.sqrt(gains.k_damp) * np.eye(n)])
        task_b = np.concatenate([task_b, np.zeros(n)])
    return _stack_level(task_A, task_b, C, C, d)


def build_level2(J_vis: np.ndarray, e_vis: Sequence[float], gains: HqpGains, qdot1: np.ndarray,
                 N1: np.ndarray, q: Sequence[float], limits: Limits, dt: float,
                 insertion: Optional[Tuple[np.ndarray, float]] = None) -> LevelBlocks:
    """
    The q_dot part of x is the null-space coordinate: objective and limits act on
    N1 x + qdot1, so d2 = d1 - C qdot1.

    `insertion` = (J_shaft, depth error) adds the row w_ins J_shaft N1 with target
    w_ins (k_ins error - J_shaft qdot1) when gains.w_ins > 0.
    """
    q = np.asarray(q, dtype=float)
    n = q.shape[0]
    C, d1 = _limit_rows(q, limits, dt)
    J_vis = np.asarray(J_vis, dtype=float).reshape(2, n)
    task_A = J_vis @ N1
    task_b = -gains.k_vis * np.asarray(e_vis, dtype=float) - J_vis @ qdot1
    if gains.k_damp > 0:
        task_A = np.vstack([task_A, np.sqrt(gains.k_damp) * N1])
        task_b = np.concatenate([task_b, np.zeros(n)])
    if gains.w_ins > 0 and insertion is not None:
        J_shaft = np.asarray(insertion[0], dtype=float).reshape(1, n)
        target = gains.k_ins * float(insertion[1]) - float((J_shaft @ qdot1)[0])
        task_A = np.vstack([task_A, gains.w_ins * (J_shaft @ N1)])
        task_b = np.concatenate([task_b, [gains.w_ins * target]])
    return _stack_level(task_A, task_b, C @ N1, C, d1 - C @ qdot1)


# ---------------------------------------------------------------------
# Controller
# ---------------------------------------------------------------------
class HqpController:
    """
    Holds warm starts for both QP levels and the last valid RCM error direction.
    One instance per control loop; not for concurrent use.
    """

    def __init__(self, chain: KinematicChain, trocar: TrocarConfig, intrinsics: CameraIntrinsics,
                 gains: HqpGains, dt: float, qp_settings: Optional[QpSettings] = None,
                 limits: Optional[Limits] = None, mode: str = "hqp"):
        if dt <= 0:
            raise ConfigError(f"control period must be positive, got {dt}")
        if mode not in CONTROLLER_MODES:
            raise ConfigError(f"unknown controller {mode!r}, expected one of {CONTROLLER_MODES}")
        self.chain = chain
        self.trocar = trocar
        self.intrinsics = intrinsics
        self.gains = gains
        self.dt = dt
        self.mode = mode
        self.limits = limits if limits is not None else (chain.q_min, chain.q_max)
        settings = qp_settings or QpSettings()
        self.level1_solver = ActiveSetQpSolver(settings, name="level1")
        self.level2_solver = ActiveSetQpSolver(settings, name="level2")
        self.reset()

    def reset(self) -> None:
        self._warm1: Optional[np.ndarray] = None
        self._warm2: Optional[np.ndarray] = None
        self._last_direction: Optional[np.ndarray] = None
        self._insertion_ref: Optional[float] = None
        self._outside_shaft = False

    def measure(self, q: Sequence[float], marker: Marker) -> CycleMeasurement:
        """
        Kinematics of one cycle: RCM state with J_rcm and J_shaft, J_vis, raw pixel
        error, depth. The first call after reset latches the insertion reference.
        """
        q = as_joint_vector(self.chain, q)
        transforms = frame_transforms(self.chain, q)
        rcm = rcm_state_with_jacobian(self.chain, q, self.trocar, self._last_direction, transforms)
        if not rcm.degenerate:
            self._last_direction = rcm.p_e_hat
        if self._insertion_ref is None:
            self._insertion_ref = rcm.shaft_param
        self._track_shaft_range(rcm)
        J_vis, e_vis, depth = visual_jacobian(self.chain, q, self.intrinsics, marker, transforms)
        return CycleMeasurement(transforms=transforms, rcm=rcm, j_vis=J_vis, e_vis=e_vis, depth=depth,
                                insertion_error=self._insertion_ref - rcm.shaft_param)

    def _track_shaft_range(self, rcm: RcmState) -> None:
        if rcm.outside_shaft == self._outside_shaft:
            return
        self._outside_shaft = rcm.outside_shaft
        if rcm.outside_shaft:
            logger.warning("[RCM] trocar projection %.4f m left the shaft [0, %.4f] m",
                           rcm.shaft_param, rcm.shaft_length)
        else:
            logger.info("[RCM] trocar projection back on the shaft at %.4f m", rcm.shaft_param)

    def solve_step(self, q: Sequence[float], marker: Marker, e_vis_cmd: Optional[np.ndarray] = None) -> HqpResult:
        meas = self.measure(q, marker)
        return self.solve_measured(q, meas, e_vis_cmd)

    def solve_measured(self, q: Sequence[float], meas: CycleMeasurement,
                       e_vis_cmd: Optional[np.ndarray] = None) -> HqpResult:
        """
        Solve one cycle from a measurement. `e_vis_cmd` replaces the raw pixel
        error (the simulator feeds the trajectory-smoothed error here).
        """
        q = np.asarray(q, dtype=float)
        e_vis = meas.e_vis if e_vis_cmd is None else np.asarray(e_vis_cmd, dtype=float)
        J_rcm = effective_rcm_row(meas.rcm.j_rcm, self.gains.svd_tolerance)
        # zero error needs no correction; the Jacobian may come from the previous direction
        e_rcm = 0.0 if meas.rcm.degenerate else meas.rcm.e_rcm
        if self.mode == "pinv":
            return self._solve_pinv(J_rcm, e_rcm, meas.j_vis, e_vis)
        insertion = None if meas.rcm.j_shaft is None else (meas.rcm.j_shaft, meas.insertion_error)
        return self._solve_hqp(q, J_rcm, e_rcm, meas.j_vis, e_vis, insertion)

    def _solve_hqp(self, q: np.ndarray, J_rcm: np.ndarray, e_rcm: float, J_vis: np.ndarray,
                   e_vis: np.ndarray, insertion: Optional[Tuple[np.ndarray, float]] = None) -> HqpResult:
        n = q.shape[0]
        zero = np.zeros(n)

        t0 = time.perf_counter()
        level1 = build_level1(J_rcm, e_rcm, self.gains, q, self.limits, self.dt)
        sol1 = self.level1_solver.solve(level1.as_problem(), self._warm1)
        level1_time = time.perf_counter() - t0

        if not sol1.solved:
            logger.warning("[HQP] level 1 %s after %d iterations; commanding zero velocity",
                           sol1.status.value, sol1.iterations)
            self._warm1 = None
            self._warm2 = None
            return HqpResult(
                qdot1=zero, qdot2=zero, qdot_sol=zero, slack1_norm=0.0, slack2_norm=0.0, N1=np.eye(n),
                level1_time=level1_time, level2_time=0.0, status1=sol1.status.value,
                status2=STATUS_SKIPPED, j_rcm=J_rcm, degraded=True,
            )
        self._warm1 = sol1.x
        qdot1 = sol1.x[:n]
        slack1 = float(np.linalg.norm(sol1.x[n:]))

        t1 = time.perf_counter()
        N1 = null_space_projector(J_rcm, self.gains.svd_tolerance)
        level2 = build_level2(J_vis, e_vis, self.gains, qdot1, N1, q, self.limits, self.dt, insertion)
        sol2 = self.level2_solver.solve(level2.as_problem(), self._warm2)
        level2_time = time.perf_counter() - t1

        if not sol2.solved:
            logger.warning("[HQP] level 2 %s after %d iterations; falling back to RCM-only motion",
                           sol2.status.value, sol2.iterations)
            self._warm2 = None
            return HqpResult(
                qdot1=qdot1, qdot2=zero, qdot_sol=qdot1.copy(), slack1_norm=slack1, slack2_norm=0.0, N1=N1,
                level1_time=level1_time, level2_time=level2_time, status1=sol1.status.value,
                status2=sol2.status.value, j_rcm=J_rcm, degraded=True,
            )
        self._warm2 = sol2.x
        qdot2 = sol2.x[:n]
        return HqpResult(
            qdot1=qdot1, qdot2=qdot2, qdot_sol=N1 @ qdot2 + qdot1,
            slack1_norm=slack1, slack2_norm=float(np.linalg.norm(sol2.x[n:])), N1=N1,
            level1_time=level1_time, level2_time=level2_time,
            status1=sol1.status.value, status2=sol2.status.value, j_rcm=J_rcm,
        )

    def _solve_pinv(self, J_rcm: np.ndarray, e_rcm: float, J_vis: np.ndarray, e_vis: np.ndarray) -> HqpResult:
        tol = self.gains.svd_tolerance
        t0 = time.perf_counter()
        qdot1 = baseline_pinv_step(J_rcm, [self.gains.k_rcm * e_rcm], tol)
        level1_time = time.perf_counter() - t0

        t1 = time.perf_counter()
        N1 = null_space_projector(J_rcm, tol)
        qdot2 = baseline_pinv_step(J_vis @ N1, -self.gains.k_vis * e_vis - J_vis @ qdot1, tol)
        level2_time = time.perf_counter() - t1
        return HqpResult(
            qdot1=qdot1, qdot2=qdot2, qdot_sol=N1 @ qdot2 + qdot1, slack1_norm=0.0, slack2_norm=0.0, N1=N1,
            level1_time=level1_time, level2_time=level2_time, status1=STATUS_PINV, status2=STATUS_PINV,
            j_rcm=J_rcm,
        )


def solve_step(chain: KinematicChain, q: Sequence[float], trocar: TrocarConfig, marker: Marker,
               intrinsics: CameraIntrinsics, gains: HqpGains, limits: Optional[Limits], dt: float,
               qp_settings: Optional[QpSettings] = None) -> HqpResult:
    """Stateless single step (cold-started QPs, no previous RCM direction)."""
    controller = HqpController(chain, trocar, intrinsics, gains, dt, qp_settings, limits)
    return controller.solve_step(q, marker)
