from __future__ import annotations

import logging
from dataclasses import replace

import numpy as np
import pytest

from audits import random_configuration, random_trocar, random_visible_marker
from conftest import REPLICA_Q, REPLICA_TROCAR
from control.hqp_controller import (
    STATUS_PINV,
    STATUS_SKIPPED,
    HqpController,
    HqpGains,
    baseline_pinv_step,
    effective_rcm_row,
    build_level1,
    build_level2,
    null_space_projector,
    solve_step,
)
from errors import ConfigError
from kinematics.jacobians import forward_kinematics
from qp import ActiveSetQpSolver, QpSettings, QpSolution, QpStatus, enumerate_active_sets, kkt_residuals
from tasks.rcm_task import TrocarConfig, compute_rcm_state, rcm_state_with_jacobian
from tasks.visual_task import CameraIntrinsics, Marker, visual_jacobian

DT = 0.002
INTR = CameraIntrinsics(f=800.0, c_u=320.0, c_v=256.0, width=640.0, height=512.0)
GAINS = HqpGains.for_dt(DT)


def _marker_at(chain, q, x_cam: float, y_cam: float, depth: float = 0.1) -> Marker:
    cam = forward_kinematics(chain, q, chain.camera_frame)
    return Marker(2, cam.position + cam.rotation @ np.array([x_cam, y_cam, depth]))


def _offset_trocar(mm: float = 2.0) -> TrocarConfig:
    return TrocarConfig(REPLICA_TROCAR + np.array([mm * 1e-3, 0.0, 0.0]))


# ---------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------
def test_default_rcm_gain_follows_period() -> None:
    assert HqpGains.for_dt(0.002).k_rcm == 200.0
    assert HqpGains.for_dt(0.01).k_rcm == pytest.approx(80.0)
    with pytest.raises(ConfigError):
        HqpGains(k_vis=0.0)


def test_pinv_examples(rng) -> None:
    x = np.array([0.3, -1.0, 2.0])
    np.testing.assert_allclose(baseline_pinv_step(np.eye(3), x), x, atol=1e-15)
    np.testing.assert_array_equal(baseline_pinv_step(np.zeros((2, 4)), [1.0, 2.0]), np.zeros(4))
    for _ in range(20):
        J = rng.normal(size=(3, 6))
        qdot = baseline_pinv_step(J, x)
        np.testing.assert_allclose(J @ qdot, x, atol=1e-10)
        np.testing.assert_allclose(qdot, J.T @ np.linalg.solve(J @ J.T, x), atol=1e-10)


def test_level1_structure_for_two_joints() -> None:
    J = np.array([[0.3, -0.4]])
    limits = (np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
    blocks = build_level1(J, 0.01, GAINS, [0.0, 0.0], limits, 0.01)
    assert blocks.Q.shape == (6, 6) and blocks.p.shape == (6,) and blocks.G.shape == (4, 6)
    assert blocks.A_bar.shape == (5, 6)
    np.testing.assert_array_equal(blocks.Q[:2, :2], J.T @ J)
    np.testing.assert_array_equal(blocks.Q[2:, 2:], np.eye(4))
    np.testing.assert_array_equal(blocks.Q[:2, 2:], np.zeros((2, 4)))
    np.testing.assert_array_equal(blocks.Q, blocks.A_bar.T @ blocks.A_bar)
    np.testing.assert_array_equal(blocks.p, -(blocks.A_bar.T @ blocks.b_bar))
    np.testing.assert_array_equal(blocks.C, np.vstack([np.eye(2), -np.eye(2)]))
    np.testing.assert_allclose(blocks.d, [100.0, 100.0, 100.0, 100.0])
    np.testing.assert_array_equal(blocks.G, np.hstack([blocks.C, -np.eye(4)]))
    assert blocks.b_bar[0] == GAINS.k_rcm * 0.01


def test_level1_zero_error_has_zero_linear_term() -> None:
    limits = (-np.ones(2), np.ones(2))
    blocks = build_level1(np.array([[0.3, -0.4]]), 0.0, GAINS, [0.0, 0.0], limits, 0.01)
    np.testing.assert_array_equal(blocks.p, np.zeros(6))


def test_joint_at_upper_limit_blocks_positive_velocity() -> None:
    limits = (-np.ones(2), np.ones(2))
    blocks = build_level1(np.array([[1.0, 0.0]]), 0.0, GAINS, [1.0, 0.0], limits, 0.01)
    assert blocks.d[0] == 0.0
    assert blocks.d[2] == pytest.approx(200.0)


def test_non_positive_period_rejected() -> None:
    with pytest.raises(ConfigError):
        build_level1(np.array([[1.0]]), 0.0, GAINS, [0.0], (-np.ones(1), np.ones(1)), 0.0)


def test_projector_examples(rng) -> None:
    np.testing.assert_array_equal(null_space_projector(np.array([[1.0, 0.0, 0.0]])), np.diag([0.0, 1.0, 1.0]))
    np.testing.assert_array_equal(null_space_projector(np.zeros((1, 4))), np.eye(4))
    np.testing.assert_array_equal(null_space_projector(np.array([[2.0]])), np.zeros((1, 1)))
    for _ in range(100):
        J = rng.normal(size=(1, 6))
        N = null_space_projector(J)
        assert np.max(np.abs(N @ N - N)) <= 1e-12
        assert np.max(np.abs(N - N.T)) <= 1e-12
        assert np.max(np.abs(J @ N)) <= 1e-12


def test_level2_structure_for_six_joints(chain, rng) -> None:
    q = REPLICA_Q
    J_vis = rng.normal(size=(2, 6))
    qdot1 = rng.normal(size=6) * 0.1
    N1 = null_space_projector(rng.normal(size=(1, 6)))
    limits = (chain.q_min, chain.q_max)
    blocks = build_level2(J_vis, [10.0, -5.0], GAINS, qdot1, N1, q, limits, DT)
    assert blocks.A_bar.shape == (14, 18)
    assert blocks.Q.shape == (18, 18) and blocks.p.shape == (18,)
    np.testing.assert_array_equal(blocks.A_bar[:2, :6], J_vis @ N1)
    np.testing.assert_allclose(blocks.b_bar[:2], -GAINS.k_vis * np.array([10.0, -5.0]) - J_vis @ qdot1)
    level1 = build_level1(rng.normal(size=(1, 6)), 0.0, GAINS, q, limits, DT)
    np.testing.assert_allclose(blocks.d, level1.d - level1.C @ qdot1)


def test_level2_idle_when_nothing_to_correct(chain) -> None:
    limits = (chain.q_min, chain.q_max)
    blocks = build_level2(np.ones((2, 6)), [0.0, 0.0], GAINS, np.zeros(6), np.eye(6), REPLICA_Q, limits, DT)
    np.testing.assert_array_equal(blocks.p, np.zeros(18))


def test_damping_rows_extend_both_levels(chain) -> None:
    gains = HqpGains(k_damp=0.01)
    limits = (chain.q_min, chain.q_max)
    level1 = build_level1(np.ones((1, 6)), 0.001, gains, REPLICA_Q, limits, DT)
    assert level1.A_bar.shape == (1 + 6 + 12, 18)
    np.testing.assert_allclose(level1.A_bar[1:7, :6], 0.1 * np.eye(6))
    N1 = null_space_projector(np.ones((1, 6)))
    level2 = build_level2(np.ones((2, 6)), [1.0, 1.0], gains, np.zeros(6), N1, REPLICA_Q, limits, DT)
    assert level2.A_bar.shape == (2 + 6 + 12, 18)
    np.testing.assert_allclose(level2.A_bar[2:8, :6], 0.1 * N1)


# ---------------------------------------------------------------------
# Full step
# ---------------------------------------------------------------------
def test_zero_errors_give_zero_velocity(chain) -> None:
    marker = _marker_at(chain, REPLICA_Q, 0.0, 0.0, 0.08)
    result = solve_step(chain, REPLICA_Q, TrocarConfig(REPLICA_TROCAR), marker, INTR, GAINS, None, DT)
    assert result.status1 == QpStatus.SOLVED.value and result.status2 == QpStatus.SOLVED.value
    assert np.max(np.abs(result.qdot_sol)) < 1e-9


def test_strict_priority_on_random_states(chain, rng) -> None:
    for _ in range(30):
        q = random_configuration(chain, rng)
        trocar = random_trocar(chain, q, rng)
        marker = random_visible_marker(chain, q, rng)
        result = solve_step(chain, q, trocar, marker, INTR, GAINS, None, DT)
        if result.status1 == "Solved" and result.status2 == "Solved":
            assert result.priority_error <= 1e-9
            np.testing.assert_allclose(result.qdot_sol, result.N1 @ result.qdot2 + result.qdot1, atol=1e-12)


def _oracle_step(chain, q, trocar, marker):
    limits = (chain.q_min, chain.q_max)
    rcm = rcm_state_with_jacobian(chain, q, trocar)
    J_vis, e_vis, _ = visual_jacobian(chain, q, INTR, marker)
    level1 = build_level1(rcm.j_rcm, rcm.e_rcm, GAINS, q, limits, DT)
    x1, _ = enumerate_active_sets(level1.as_problem())
    qdot1 = x1[:chain.n]
    N1 = null_space_projector(rcm.j_rcm, GAINS.svd_tolerance)
    level2 = build_level2(J_vis, e_vis, GAINS, qdot1, N1, q, limits, DT)
    x2, _ = enumerate_active_sets(level2.as_problem())
    return N1 @ x2[:chain.n] + qdot1


def test_matches_enumeration_oracle(chain, rng) -> None:
    states = [random_configuration(chain, rng) for _ in range(3)]
    near_limit = states[0].copy()
    near_limit[1] = chain.q_max[1] - 1e-4
    states.append(near_limit)
    for q in states:
        trocar = random_trocar(chain, q, rng)
        marker = random_visible_marker(chain, q, rng)
        result = solve_step(chain, q, trocar, marker, INTR, GAINS, None, DT)
        expected = _oracle_step(chain, q, trocar, marker)
        assert np.max(np.abs(result.qdot_sol - expected)) <= 1e-6 * max(1.0, float(np.max(np.abs(expected))))


def test_level2_solutions_meet_certified_dual_bound(chain, rng) -> None:
    limits = (chain.q_min, chain.q_max)
    solver = ActiveSetQpSolver(name="level2")
    states = [REPLICA_Q] + [random_configuration(chain, rng) for _ in range(10)]
    for q in states:
        trocar = _offset_trocar() if q is REPLICA_Q else random_trocar(chain, q, rng)
        marker = _marker_at(chain, q, 0.02, -0.01) if q is REPLICA_Q else random_visible_marker(chain, q, rng)
        rcm = rcm_state_with_jacobian(chain, q, trocar)
        J_vis, e_vis, _ = visual_jacobian(chain, q, INTR, marker)
        sol1 = _solve_level1(build_level1(rcm.j_rcm, rcm.e_rcm, GAINS, q, limits, DT))
        qdot1 = sol1.x[:chain.n]
        N1 = null_space_projector(rcm.j_rcm, GAINS.svd_tolerance)
        prob = build_level2(J_vis, e_vis, GAINS, qdot1, N1, q, limits, DT).as_problem()
        sol = solver.solve(prob)
        assert sol.solved
        primal, dual, comp = kkt_residuals(prob, sol.x, sol.duals, sol.ridge)
        assert primal <= 1e-8
        assert dual <= solver.dual_tolerance(prob, sol.x)
        assert comp <= 1e-6


def _solve_level1(blocks):
    sol = ActiveSetQpSolver(name="level1").solve(blocks.as_problem())
    assert sol.solved
    return sol


def test_slack_dormant_and_limits_respected_inside_workspace(chain) -> None:
    marker = _marker_at(chain, REPLICA_Q, 0.0, 0.02)
    result = solve_step(chain, REPLICA_Q, _offset_trocar(), marker, INTR, GAINS, None, DT)
    assert not result.degraded
    assert result.slack1_norm <= 1e-8 and result.slack2_norm <= 1e-8
    q_next = REPLICA_Q + DT * result.qdot_sol
    assert np.all(q_next >= chain.q_min - 1e-9) and np.all(q_next <= chain.q_max + 1e-9)


def test_rcm_correction_is_first_order_exact(chain) -> None:
    trocar = _offset_trocar(2.0)
    marker = _marker_at(chain, REPLICA_Q, 0.01, 0.0)
    result = solve_step(chain, REPLICA_Q, trocar, marker, INTR, GAINS, None, DT)
    e_rcm = rcm_state_with_jacobian(chain, REPLICA_Q, trocar).e_rcm
    assert e_rcm == pytest.approx(2e-3, rel=1e-6)
    achieved = float((result.j_rcm @ result.qdot_sol)[0])
    assert achieved == pytest.approx(GAINS.k_rcm * e_rcm, rel=1e-6)


def test_level2_failure_falls_back_to_rcm_only(chain, monkeypatch) -> None:
    controller = HqpController(chain, _offset_trocar(), INTR, GAINS, DT)
    failed = QpSolution(x=np.zeros(18), status=QpStatus.MAX_ITERATIONS, iterations=10000,
                        primal_residual=0.0, dual_residual=1.0, duals=np.zeros(12), solve_time=0.0)
    monkeypatch.setattr(controller.level2_solver, "solve", lambda prob, warm_start=None: failed)
    result = controller.solve_step(REPLICA_Q, _marker_at(chain, REPLICA_Q, 0.01, 0.01))
    assert result.degraded
    assert result.status1 == "Solved" and result.status2 == "MaxIterations"
    np.testing.assert_array_equal(result.qdot_sol, result.qdot1)
    assert np.linalg.norm(result.qdot1) > 0.0


def test_level1_failure_freezes_the_robot(chain, monkeypatch) -> None:
    controller = HqpController(chain, _offset_trocar(), INTR, GAINS, DT)
    failed = QpSolution(x=np.zeros(18), status=QpStatus.PRIMAL_INFEASIBLE, iterations=0,
                        primal_residual=np.inf, dual_residual=np.inf, duals=np.zeros(12), solve_time=0.0)
    monkeypatch.setattr(controller.level1_solver, "solve", lambda prob, warm_start=None: failed)
    result = controller.solve_step(REPLICA_Q, _marker_at(chain, REPLICA_Q, 0.01, 0.01))
    assert result.degraded
    assert result.status1 == "PrimalInfeasible" and result.status2 == STATUS_SKIPPED
    np.testing.assert_array_equal(result.qdot_sol, np.zeros(6))


def test_warm_started_controller_matches_cold_solution(chain) -> None:
    trocar = _offset_trocar()
    marker = _marker_at(chain, REPLICA_Q, 0.01, 0.01)
    controller = HqpController(chain, trocar, INTR, GAINS, DT, QpSettings())
    first = controller.solve_step(REPLICA_Q, marker)
    second = controller.solve_step(REPLICA_Q, marker)
    np.testing.assert_allclose(second.qdot_sol, first.qdot_sol, atol=1e-8)
    controller.reset()
    third = controller.solve_step(REPLICA_Q, marker)
    assert third.qdot_sol.tobytes() == first.qdot_sol.tobytes()


def test_pinv_controller_keeps_priority(chain) -> None:
    trocar = _offset_trocar()
    controller = HqpController(chain, trocar, INTR, GAINS, DT, mode="pinv")
    result = controller.solve_step(REPLICA_Q, _marker_at(chain, REPLICA_Q, 0.01, 0.01))
    assert result.status1 == STATUS_PINV and result.status2 == STATUS_PINV
    assert result.priority_error <= 1e-9
    e_rcm = rcm_state_with_jacobian(chain, REPLICA_Q, trocar).e_rcm
    assert float((result.j_rcm @ result.qdot1)[0]) == pytest.approx(GAINS.k_rcm * e_rcm, rel=1e-9)


def test_unknown_controller_mode_rejected(chain) -> None:
    with pytest.raises(ConfigError):
        HqpController(chain, _offset_trocar(), INTR, GAINS, DT, mode="osqp")


# ---------------------------------------------------------------------
# Insertion hold and shaft range
# ---------------------------------------------------------------------
def test_level2_insertion_row() -> None:
    J_vis = np.array([[1.0, 2.0], [0.0, 1.0]])
    limits = (-np.ones(2), np.ones(2))
    qdot1 = np.array([0.1, 0.0])
    hold = HqpGains(k_rcm=100.0, w_ins=10.0, k_ins=2.0)
    blocks = build_level2(J_vis, [0.0, 0.0], hold, qdot1, np.eye(2), [0.0, 0.0], limits, 0.01,
                          insertion=(np.array([[0.5, -1.0]]), 0.01))
    assert blocks.A_bar.shape == (7, 6)
    np.testing.assert_allclose(blocks.A_bar[2], [5.0, -10.0, 0.0, 0.0, 0.0, 0.0])
    assert blocks.b_bar[2] == pytest.approx(10.0 * (2.0 * 0.01 - 0.05))
    np.testing.assert_array_equal(blocks.Q, blocks.A_bar.T @ blocks.A_bar)
    plain = build_level2(J_vis, [0.0, 0.0], GAINS, qdot1, np.eye(2), [0.0, 0.0], limits, 0.01,
                         insertion=(np.array([[0.5, -1.0]]), 0.01))
    assert plain.A_bar.shape == (6, 6)
    with pytest.raises(ConfigError):
        HqpGains(w_ins=-1.0)


def test_insertion_hold_stops_retraction(chain) -> None:
    trocar = _offset_trocar()
    marker = _marker_at(chain, REPLICA_Q, 0.02, 0.0)
    J_shaft = rcm_state_with_jacobian(chain, REPLICA_Q, trocar).j_shaft
    free = solve_step(chain, REPLICA_Q, trocar, marker, INTR, GAINS, None, DT)
    held = solve_step(chain, REPLICA_Q, trocar, marker, INTR, HqpGains.for_dt(DT, w_ins=1000.0), None, DT)
    assert abs(float((J_shaft @ free.qdot_sol)[0])) > 1e-3
    assert abs(float((J_shaft @ held.qdot_sol)[0])) <= 1e-6
    # the visual and RCM rows are still met exactly
    J_vis, e_vis, _ = visual_jacobian(chain, REPLICA_Q, INTR, marker)
    np.testing.assert_allclose(J_vis @ held.qdot_sol, -GAINS.k_vis * e_vis, rtol=1e-6, atol=1e-6)
    assert held.priority_error <= 1e-9


def test_shaft_range_warning_logged_on_transitions_only(chain, caplog) -> None:
    tip = forward_kinematics(chain, REPLICA_Q, chain.shaft_tip_frame).position
    s_hat = compute_rcm_state(chain, REPLICA_Q, _offset_trocar()).p_s_hat
    side = np.linalg.svd(s_hat.reshape(1, 3))[2][1]
    beyond = TrocarConfig(tip + 0.05 * s_hat + 2e-3 * side)
    controller = HqpController(chain, beyond, INTR, GAINS, DT)
    marker = _marker_at(chain, REPLICA_Q, 0.0, 0.0)
    caplog.set_level(logging.INFO, logger="HQP")
    for _ in range(3):
        assert controller.measure(REPLICA_Q, marker).rcm.outside_shaft
    controller.trocar = _offset_trocar()
    controller.measure(REPLICA_Q, marker)
    messages = [(r.levelno, r.getMessage()) for r in caplog.records if r.name == "HQP"]
    assert [lvl for lvl, msg in messages if "left the shaft" in msg] == [logging.WARNING]
    assert sum("back on the shaft" in msg for _, msg in messages) == 1


def test_rcm_row_below_cutoff_is_dropped(chain) -> None:
    np.testing.assert_array_equal(effective_rcm_row(np.full((1, 4), 1e-9)), np.zeros((1, 4)))
    row = np.array([[1e-6, 0.0, 0.0]])
    np.testing.assert_array_equal(effective_rcm_row(row), row)

    controller = HqpController(chain, _offset_trocar(), INTR, GAINS, DT)
    meas = controller.measure(REPLICA_Q, _marker_at(chain, REPLICA_Q, 0.01, 0.01))
    j = meas.rcm.j_rcm
    tiny = replace(meas, rcm=replace(meas.rcm, j_rcm=5e-9 * j / np.linalg.norm(j)))
    result = controller.solve_measured(REPLICA_Q, tiny)
    np.testing.assert_array_equal(result.N1, np.eye(chain.n))
    np.testing.assert_array_equal(result.j_rcm, np.zeros((1, chain.n)))
    assert result.priority_error == 0.0
