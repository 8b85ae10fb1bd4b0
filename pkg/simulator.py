# simulator.py
"""
Closed-loop kinematic simulation of the endoscope tracking experiment.

Per cycle (explicit Euler at dt):
 1) measure RCM state, J_rcm, J_vis and the active marker's pixel error
 2) smooth the pixel reference with the OTG (optional)
 3) solve the two-level HQP, integrate q <- q + dt * qdot_sol
 4) log a StepRecord and advance the target sequencer

Geometry failures (marker behind the camera / off the image, degenerate shaft)
abort the run with a partial log and completed = False.
"""

import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from config import RECORD_TIMING
from control.hqp_controller import HqpController
from control.otg import OtgState, otg_step
from errors import GeometryError
from scenario import Scenario, validate_scenario

logger = logging.getLogger("Simulator")


# ---------------------------------------------------------------------
# Target sequencing
# ---------------------------------------------------------------------
@dataclass(frozen=True)
class SequencerState:
    count: int
    index: int = 0
    streak: int = 0
    finished: bool = False
    advanced: bool = False
    just_converged: bool = False


def advance_target(state: SequencerState, e_vis_norm: float, threshold: float, settle_cycles: int) -> SequencerState:
    """
    Counts consecutive samples strictly below `threshold`; after `settle_cycles`
    of them the active target is converged and the next one becomes active.
    The last target is held.
    """
    streak = state.streak + 1 if e_vis_norm < threshold else 0
    if streak < settle_cycles:
        return replace(state, streak=streak, advanced=False, just_converged=False)
    if state.index < state.count - 1:
        return replace(state, index=state.index + 1, streak=0, advanced=True, just_converged=True)
    return replace(state, streak=streak, finished=True, advanced=False, just_converged=not state.finished)


# ---------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------
@dataclass(frozen=True)
class StepRecord:
    t: float
    q: np.ndarray
    qdot_sol: np.ndarray
    e_rcm_mm: float
    e_vis_u: float
    e_vis_v: float
    e_vis_norm: float
    active_target: int
    solve_us: float
    slack1: float
    slack2: float
    status1: str
    status2: str
    priority_error: float = 0.0
    shaft_param: float = 0.0
    shaft_length: float = 0.0


@dataclass
class SimResult:
    records: List[StepRecord]
    summary: Dict[str, Any]
    completed: bool
    abort_reason: Optional[str] = None
    n_joints: int = 0


def log_columns(n: int) -> List[str]:
    return (["t"] + [f"q{i}" for i in range(n)] + [f"qd{i}" for i in range(n)]
            + ["e_rcm_mm", "e_vis_u", "e_vis_v", "e_vis_px", "target_id", "solve_us",
               "slack1", "slack2", "status1", "status2"])


def records_to_frame(records: Sequence[StepRecord], n: int) -> pd.DataFrame:
    rows = []
    for r in records:
        rows.append([r.t, *r.q.tolist(), *r.qdot_sol.tolist(), r.e_rcm_mm, r.e_vis_u, r.e_vis_v,
                     r.e_vis_norm, r.active_target, r.solve_us, r.slack1, r.slack2, r.status1, r.status2])
    return pd.DataFrame(rows, columns=log_columns(n))


# ---------------------------------------------------------------------
# Summary
# ---------------------------------------------------------------------
def _summary_core(t: np.ndarray, e_rcm_mm: np.ndarray, e_vis_px: np.ndarray, solve_us: np.ndarray,
                  marker_ids: Sequence[int], threshold: float, settle_cycles: int,
                  aborted: bool) -> Dict[str, Any]:
    seq = SequencerState(count=len(marker_ids))
    converged: Dict[int, float] = {}
    for tk, ek in zip(t, e_vis_px):
        active = seq.index
        seq = advance_target(seq, float(ek), threshold, settle_cycles)
        if seq.just_converged:
            converged[marker_ids[active]] = float(tk)

    final_ok = bool(len(e_vis_px)) and float(e_vis_px[-1]) < threshold
    completed = (not aborted) and seq.finished and final_ok
    empty = len(t) == 0
    return {
        "max_e_rcm_mm": None if empty else float(np.max(e_rcm_mm)),
        "mean_e_rcm_mm": None if empty else float(np.mean(e_rcm_mm)),
        "mean_solve_us": None if empty else float(np.mean(solve_us)),
        "max_solve_us": None if empty else float(np.max(solve_us)),
        "targets": [{"id": int(mid), "t_converged_s": converged.get(mid)} for mid in marker_ids],
        "completed": bool(completed),
    }


def summarize(records: Sequence[StepRecord], marker_ids: Sequence[int], threshold: float,
              settle_cycles: int, aborted: bool = False) -> Dict[str, Any]:
    """Summary recomputed from the records alone (the sequencer is replayed)."""
    return _summary_core(
        np.array([r.t for r in records]), np.array([r.e_rcm_mm for r in records]),
        np.array([r.e_vis_norm for r in records]), np.array([r.solve_us for r in records]),
        marker_ids, threshold, settle_cycles, aborted,
    )


def summarize_log(df: pd.DataFrame, marker_ids: Sequence[int], threshold: float,
                  settle_cycles: int, aborted: bool = False) -> Dict[str, Any]:
    """Same summary from a CSV log loaded with pandas."""
    return _summary_core(df["t"].to_numpy(), df["e_rcm_mm"].to_numpy(), df["e_vis_px"].to_numpy(),
                         df["solve_us"].to_numpy(), marker_ids, threshold, settle_cycles, aborted)


# ---------------------------------------------------------------------
# Main loop
# ---------------------------------------------------------------------
def run_scenario(s: Scenario, record_timing: bool = RECORD_TIMING, progress: bool = False,
                 max_cycles: Optional[int] = None, controller: Optional[HqpController] = None) -> SimResult:
    validate_scenario(s)
    n = s.chain.n
    cycles = s.n_cycles if max_cycles is None else min(max_cycles, s.n_cycles)
    if controller is None:
        controller = HqpController(s.chain, s.trocar, s.intrinsics, s.gains, s.dt, s.qp_settings, mode=s.controller)
    rng = np.random.default_rng(s.seed)
    marker_ids = [m.id for m in s.markers]

    q = np.array(s.initial_q, dtype=float)
    seq = SequencerState(count=len(s.markers))
    otg: Optional[OtgState] = None
    records: List[StepRecord] = []
    abort_reason: Optional[str] = None
    target_origin = np.zeros(2)

    logger.info("[Sim] %s: %d cycles at %.1f Hz, controller=%s, otg=%s",
                s.name, cycles, 1.0 / s.dt, s.controller, "on" if s.otg_enabled else "off")

    for k in tqdm(range(cycles), desc=f"sim:{s.name}", disable=not progress):
        t = k * s.dt
        marker = s.markers[seq.index]
        try:
            meas = controller.measure(q, marker)
            u = meas.e_vis[0] + s.intrinsics.c_u
            v = meas.e_vis[1] + s.intrinsics.c_v
            if not s.intrinsics.contains(u, v):
                raise GeometryError(f"marker {marker.id} left the image at ({u:.1f}, {v:.1f}) px")
        except GeometryError as exc:
            abort_reason = f"t={t:.3f}s: {exc}"
            logger.error("[Sim] %s aborted at %s", s.name, abort_reason)
            break

        e_meas = meas.e_vis
        if s.pixel_noise > 0:
            e_meas = e_meas + rng.uniform(-s.pixel_noise, s.pixel_noise, size=2)

        if s.otg_enabled:
            if otg is None:
                otg = OtgState.at_rest(e_meas)
            otg = otg_step(otg, target_origin, s.otg_limits, s.dt)
            e_cmd = e_meas - otg.pos
        else:
            e_cmd = e_meas

        result = controller.solve_measured(q, meas, e_cmd)
        e_norm = float(math.hypot(e_meas[0], e_meas[1]))
        records.append(StepRecord(
            t=t, q=q.copy(), qdot_sol=result.qdot_sol.copy(), e_rcm_mm=meas.rcm.e_rcm * 1e3,
            e_vis_u=float(e_meas[0]), e_vis_v=float(e_meas[1]), e_vis_norm=e_norm,
            active_target=marker.id, solve_us=result.solve_time * 1e6 if record_timing else 0.0,
            slack1=result.slack1_norm, slack2=result.slack2_norm,
            status1=result.status1, status2=result.status2, priority_error=result.priority_error,
            shaft_param=meas.rcm.shaft_param, shaft_length=meas.rcm.shaft_length,
        ))

        seq = advance_target(seq, e_norm, s.switch_threshold, s.settle_cycles)
        if seq.just_converged:
            logger.info("[Sim] target %d converged at t=%.3f s", marker.id, t)
        if seq.advanced:
            otg = None
        q = q + s.dt * result.qdot_sol

    summary = summarize(records, marker_ids, s.switch_threshold, s.settle_cycles, aborted=abort_reason is not None)
    summary["abort_reason"] = abort_reason
    summary["controller"] = s.controller
    result = SimResult(records=records, summary=summary, completed=summary["completed"],
                       abort_reason=abort_reason, n_joints=n)
    log_summary(s.name, summary)
    return result


def log_summary(name: str, summary: Dict[str, Any]) -> None:
    logger.info("========== RUN SUMMARY: %s ==========", name)
    if summary["max_e_rcm_mm"] is not None:
        logger.info("RCM error        : max %.4f mm | mean %.4f mm", summary["max_e_rcm_mm"], summary["mean_e_rcm_mm"])
        logger.info("Solve time       : mean %.1f us | max %.1f us", summary["mean_solve_us"], summary["max_solve_us"])
    for target in summary["targets"]:
        logger.info("Target %-9s : %s", target["id"],
                    "not converged" if target["t_converged_s"] is None else f"{target['t_converged_s']:.3f} s")
    logger.info("Completed        : %s", summary["completed"])


# ---------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------
def write_log(result: SimResult, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df = records_to_frame(result.records, result.n_joints)
    df.to_csv(path, index=False, lineterminator="\n", float_format="%.17g", encoding="utf-8")
    return path


def write_summary(result: SimResult, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(result.summary, fh, indent=2)
        fh.write("\n")
    return path
