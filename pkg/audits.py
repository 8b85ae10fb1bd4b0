# audits.py
"""
Finite-difference audit suite behind the `check` command.

Each audit draws random configurations of a chain and reports the worst
relative error of an analytic quantity against its numeric counterpart:
 - position_jacobian  vs central differences of forward kinematics
 - geometric_rotation vs differences of the rotation matrix (log map)
 - rcm_jacobian       vs directional differences of p_e . p_rcm
 - visual_jacobian    vs directional differences of the projected pixel
 - projector          N^2 = N and J_rcm N = 0
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy.spatial.transform import Rotation

from control.hqp_controller import null_space_projector
from kinematics.chain import KinematicChain, default_chain
from kinematics.jacobians import frame_transforms, geometric_jacobian, numeric_jacobian, position_jacobian
from tasks.rcm_task import TrocarConfig, compute_rcm_state, rcm_jacobian
from tasks.visual_task import CameraIntrinsics, Marker, project_point, visual_jacobian

logger = logging.getLogger("Audits")

FD_STEP = 1e-6
THRESHOLDS: Dict[str, float] = {
    "position_jacobian": 1e-5,
    "geometric_rotation": 1e-5,
    "rcm_jacobian": 1e-4,
    "visual_jacobian": 1e-4,
    "projector": 1e-12,
}


@dataclass
class AuditReport:
    samples: int
    seed: int
    worst: Dict[str, float] = field(default_factory=dict)

    def passed(self, name: str) -> bool:
        return self.worst[name] < THRESHOLDS[name]

    @property
    def ok(self) -> bool:
        return all(self.passed(name) for name in self.worst)

    def lines(self) -> List[str]:
        out = [f"check: {self.samples} samples, seed {self.seed}"]
        for name, value in self.worst.items():
            mark = "ok" if self.passed(name) else "FAIL"
            out.append(f"  {name:<20s} worst {value:.3e}  (limit {THRESHOLDS[name]:.0e})  {mark}")
        out.append("result: " + ("PASS" if self.ok else "FAIL"))
        return out


# ---------------------------------------------------------------------
# Sampling helpers
# ---------------------------------------------------------------------
def random_configuration(chain: KinematicChain, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(chain.q_min, chain.q_max)


def random_trocar(chain: KinematicChain, q: np.ndarray, rng: np.random.Generator) -> TrocarConfig:
    """Trocar a few mm off the shaft, between the pre-RCM frame and the tip."""
    T = frame_transforms(chain, q)
    p_pre = T[chain.pre_rcm_frame][:3, 3]
    p_s = T[chain.shaft_tip_frame][:3, 3] - p_pre
    s_hat = p_s / np.linalg.norm(p_s)
    off = rng.normal(size=3)
    off -= (off @ s_hat) * s_hat
    off *= rng.uniform(1e-3, 5e-3) / np.linalg.norm(off)
    return TrocarConfig(p_pre + rng.uniform(0.3, 0.9) * p_s + off)


def random_visible_marker(chain: KinematicChain, q: np.ndarray, rng: np.random.Generator) -> Marker:
    T_cam = frame_transforms(chain, q)[chain.camera_frame]
    Z = rng.uniform(0.05, 0.2)
    p_cam = np.array([rng.uniform(-0.3, 0.3) * Z, rng.uniform(-0.3, 0.3) * Z, Z])
    return Marker(id=0, p_world=T_cam[:3, :3] @ p_cam + T_cam[:3, 3])


def _unit(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.normal(size=n)
    return v / np.linalg.norm(v)


# ---------------------------------------------------------------------
# Audits
# ---------------------------------------------------------------------
def audit_position_jacobian(chain: KinematicChain, q: np.ndarray, rng: np.random.Generator) -> float:
    frame = int(rng.integers(1, chain.camera_frame + 1))
    J = position_jacobian(chain, q, frame)
    Jn = numeric_jacobian(chain, q, frame, FD_STEP)
    return float(np.max(np.abs(J - Jn)) / max(1.0, np.max(np.abs(J))))


def audit_geometric_rotation(chain: KinematicChain, q: np.ndarray, rng: np.random.Generator) -> float:
    frame = chain.camera_frame
    J = geometric_jacobian(chain, q, frame)[3:]
    Jn = np.zeros_like(J)
    for j in range(chain.n):
        dq = np.zeros(chain.n)
        dq[j] = FD_STEP
        R_plus = frame_transforms(chain, q + dq)[frame][:3, :3]
        R_minus = frame_transforms(chain, q - dq)[frame][:3, :3]
        Jn[:, j] = Rotation.from_matrix(R_plus @ R_minus.T).as_rotvec() / (2.0 * FD_STEP)
    return float(np.max(np.abs(J - Jn)) / max(1.0, np.max(np.abs(J))))


def audit_rcm_jacobian(chain: KinematicChain, q: np.ndarray, rng: np.random.Generator) -> float:
    trocar = random_trocar(chain, q, rng)
    state = compute_rcm_state(chain, q, trocar)
    J = rcm_jacobian(chain, q, state)
    qd = _unit(rng, chain.n)
    plus = compute_rcm_state(chain, q + FD_STEP * qd, trocar).p_rcm
    minus = compute_rcm_state(chain, q - FD_STEP * qd, trocar).p_rcm
    fd = float(state.p_e_hat @ (plus - minus)) / (2.0 * FD_STEP)
    analytic = float((J @ qd)[0])
    scale = max(abs(fd), float(np.max(np.abs(J))), 1e-12)
    return abs(analytic - fd) / scale


def audit_visual_jacobian(chain: KinematicChain, q: np.ndarray, rng: np.random.Generator,
                          intrinsics: Optional[CameraIntrinsics] = None) -> float:
    intrinsics = intrinsics or CameraIntrinsics(f=800.0, c_u=320.0, c_v=256.0, width=640.0, height=512.0)
    marker = random_visible_marker(chain, q, rng)
    J, _, _ = visual_jacobian(chain, q, intrinsics, marker)
    qd = _unit(rng, chain.n)

    def pixel(qq: np.ndarray) -> np.ndarray:
        T = frame_transforms(chain, qq)[chain.camera_frame]
        pt, _ = project_point(T[:3, :3], T[:3, 3], intrinsics, marker.p_world)
        return np.array([pt.u, pt.v])

    fd = (pixel(q + FD_STEP * qd) - pixel(q - FD_STEP * qd)) / (2.0 * FD_STEP)
    return float(np.max(np.abs(J @ qd - fd)) / max(float(np.max(np.abs(fd))), 1e-6))


def audit_projector(chain: KinematicChain, q: np.ndarray, rng: np.random.Generator) -> float:
    trocar = random_trocar(chain, q, rng)
    state = compute_rcm_state(chain, q, trocar)
    J = rcm_jacobian(chain, q, state)
    N = null_space_projector(J)
    return float(max(np.max(np.abs(N @ N - N)), np.max(np.abs(J @ N)) / max(1.0, float(np.max(np.abs(J))))))


AUDITS: Dict[str, Callable[[KinematicChain, np.ndarray, np.random.Generator], float]] = {
    "position_jacobian": audit_position_jacobian,
    "geometric_rotation": audit_geometric_rotation,
    "rcm_jacobian": audit_rcm_jacobian,
    "visual_jacobian": audit_visual_jacobian,
    "projector": audit_projector,
}


def run_audits(samples: int = 100, seed: int = 0, chain: Optional[KinematicChain] = None) -> AuditReport:
    chain = chain or default_chain()
    rng = np.random.default_rng(seed)
    report = AuditReport(samples=samples, seed=seed, worst={name: 0.0 for name in AUDITS})
    for _ in range(samples):
        q = random_configuration(chain, rng)
        for name, audit in AUDITS.items():
            report.worst[name] = max(report.worst[name], audit(chain, q, rng))
    for name, value in report.worst.items():
        logger.debug("[Audit] %s worst relative error %.3e", name, value)
    return report
