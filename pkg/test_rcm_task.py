from __future__ import annotations

import numpy as np
import pytest

from audits import audit_rcm_jacobian, random_configuration, random_trocar
from conftest import REPLICA_Q, REPLICA_TROCAR, simple_chain
from errors import GeometryError
from kinematics.chain import Pose
from tasks.rcm_task import (
    TrocarConfig,
    compute_rcm_state,
    rcm_jacobian,
    rcm_point_jacobian,
    rcm_state_with_jacobian,
    shaft_param_jacobian,
)


def _vertical_shaft(length: float = 0.6):
    # joint frame at the origin, shaft along +z
    return simple_chain([(0.0, 0.0, 0.0)], tool=(0.0, 0.0, length))


def test_trocar_on_axis_gives_zero_error() -> None:
    state = compute_rcm_state(_vertical_shaft(), [0.0], TrocarConfig([0.0, 0.0, 0.1]))
    np.testing.assert_allclose(state.p_rcm, [0.0, 0.0, 0.1], atol=1e-15)
    assert state.e_rcm == 0.0
    assert state.degenerate
    np.testing.assert_array_equal(state.p_e_hat, np.zeros(3))


def test_axis_projection_example() -> None:
    state = compute_rcm_state(_vertical_shaft(), [0.0], TrocarConfig([0.1, 0.0, 0.5]))
    np.testing.assert_allclose(state.p_rcm, [0.0, 0.0, 0.5], atol=1e-15)
    assert state.e_rcm == pytest.approx(0.1, abs=1e-15)
    np.testing.assert_allclose(state.p_e_hat, [1.0, 0.0, 0.0], atol=1e-15)
    assert state.shaft_param == pytest.approx(0.5)


def test_closest_point_matches_dense_line_sampling(chain, rng) -> None:
    q = random_configuration(chain, rng)
    trocar = random_trocar(chain, q, rng)
    state = compute_rcm_state(chain, q, trocar)
    t = np.linspace(-1.0, 1.0, 1_000_001)
    pts = state.p_pre[None, :] + t[:, None] * state.p_s_hat[None, :]
    sampled = np.min(np.linalg.norm(trocar.p_trocar[None, :] - pts, axis=1))
    assert state.e_rcm <= sampled + 1e-12
    assert sampled - state.e_rcm < 1e-6


def test_state_invariants_on_random_configurations(chain, rng) -> None:
    for _ in range(50):
        q = random_configuration(chain, rng)
        trocar = random_trocar(chain, q, rng)
        s = compute_rcm_state(chain, q, trocar)
        assert abs((trocar.p_trocar - s.p_rcm) @ s.p_s_hat) < 1e-10
        assert s.e_rcm == pytest.approx(np.linalg.norm(trocar.p_trocar - s.p_rcm), abs=1e-12)
        assert np.linalg.norm(s.p_s_hat) == pytest.approx(1.0, abs=1e-12)
        assert np.linalg.norm(s.p_e_hat) == pytest.approx(1.0, abs=1e-12)


def test_pivoting_about_trocar_leaves_rcm_task_unchanged() -> None:
    # shaft along x from the origin, rotating about base z which passes through the trocar
    chain = simple_chain([(0.0, 0.0, 0.0)], tool=(0.1, 0.0, 0.0))
    trocar = TrocarConfig([0.0, 0.0, 0.05])
    state = compute_rcm_state(chain, [0.4], trocar)
    assert state.e_rcm == pytest.approx(0.05)
    assert abs(rcm_jacobian(chain, [0.4], state)[0, 0]) < 1e-12


def test_rcm_jacobian_matches_finite_differences(chain, rng) -> None:
    worst = max(audit_rcm_jacobian(chain, random_configuration(chain, rng), rng) for _ in range(100))
    assert worst < 1e-4


def test_error_decreases_along_positive_task_velocity(chain, rng) -> None:
    """e(q + d qd) - e(q - d qd) / 2d  ==  -J_rcm qd."""
    for _ in range(30):
        q = random_configuration(chain, rng)
        trocar = random_trocar(chain, q, rng)
        state = compute_rcm_state(chain, q, trocar)
        J = rcm_jacobian(chain, q, state)
        qd = rng.normal(size=chain.n)
        # Richardson extrapolation of the central difference
        def central(h: float) -> float:
            plus = compute_rcm_state(chain, q + h * qd, trocar).e_rcm
            minus = compute_rcm_state(chain, q - h * qd, trocar).e_rcm
            return (plus - minus) / (2.0 * h)
        rate = (4.0 * central(5e-6) - central(1e-5)) / 3.0
        analytic = -float((J @ qd)[0])
        assert abs(rate - analytic) <= 1e-4 * max(abs(analytic), float(np.max(np.abs(J)))) + 1e-9


def test_reversed_shaft_direction_keeps_error() -> None:
    forward = simple_chain([(0.0, 0.0, 0.0)], tool=(0.0, 0.0, 0.6))
    backward = simple_chain([(0.0, 0.0, 0.6)], tool=(0.0, 0.0, -0.6))
    trocar = TrocarConfig([0.1, 0.02, 0.3])
    e1 = compute_rcm_state(forward, [0.2], trocar).e_rcm
    e2 = compute_rcm_state(backward, [0.2], trocar).e_rcm
    assert e1 == pytest.approx(e2, abs=1e-12)


def test_state_invariant_under_scene_translation(chain, rng) -> None:
    q = random_configuration(chain, rng)
    trocar = random_trocar(chain, q, rng)
    shift = np.array([0.3, -0.2, 0.1])
    shifted_chain = type(chain)(joints=chain.joints, pre_rcm_frame=chain.pre_rcm_frame,
                                tool_transform=chain.tool_transform, camera_mount=chain.camera_mount,
                                base=Pose(np.eye(3), shift))
    a = compute_rcm_state(chain, q, trocar)
    b = compute_rcm_state(shifted_chain, q, TrocarConfig(trocar.p_trocar + shift))
    assert b.e_rcm == pytest.approx(a.e_rcm, abs=1e-12)
    np.testing.assert_allclose(b.p_rcm - shift, a.p_rcm, atol=1e-12)
    np.testing.assert_allclose(rcm_jacobian(shifted_chain, q, b), rcm_jacobian(chain, q, a), atol=1e-12)


def test_degenerate_shaft_raises() -> None:
    chain = simple_chain([(0.0, 0.0, 0.2)], tool=(0.0, 0.0, 0.0))
    with pytest.raises(GeometryError):
        compute_rcm_state(chain, [0.0], TrocarConfig([0.0, 0.0, 0.1]))


def test_degenerate_error_uses_previous_direction_or_zero_row(chain) -> None:
    trocar = TrocarConfig(REPLICA_TROCAR)
    state = compute_rcm_state(chain, REPLICA_Q, trocar)
    assert state.degenerate
    with pytest.raises(GeometryError):
        rcm_jacobian(chain, REPLICA_Q, state)

    cold = rcm_state_with_jacobian(chain, REPLICA_Q, trocar)
    np.testing.assert_array_equal(cold.j_rcm, np.zeros((1, chain.n)))

    direction = np.array([1.0, 0.0, 0.0])
    warm = rcm_state_with_jacobian(chain, REPLICA_Q, trocar, previous_direction=direction)
    expected = direction @ rcm_point_jacobian(chain, REPLICA_Q, state)
    np.testing.assert_allclose(warm.j_rcm[0], expected, atol=1e-15)


def test_shaft_param_jacobian_matches_finite_differences(chain, rng) -> None:
    h = 1e-6
    for _ in range(20):
        q = random_configuration(chain, rng)
        trocar = random_trocar(chain, q, rng)
        J = shaft_param_jacobian(chain, q, compute_rcm_state(chain, q, trocar))
        assert J.shape == (1, chain.n)
        for i in range(chain.n):
            step = np.zeros(chain.n)
            step[i] = h
            fd = (compute_rcm_state(chain, q + step, trocar).shaft_param
                  - compute_rcm_state(chain, q - step, trocar).shaft_param) / (2 * h)
            assert J[0, i] == pytest.approx(fd, abs=1e-6)


def test_outside_shaft_flag() -> None:
    shaft = _vertical_shaft(0.6)
    assert not compute_rcm_state(shaft, [0.0], TrocarConfig([0.01, 0.0, 0.3])).outside_shaft
    beyond_tip = compute_rcm_state(shaft, [0.0], TrocarConfig([0.01, 0.0, 0.7]))
    assert beyond_tip.outside_shaft and beyond_tip.shaft_param == pytest.approx(0.7)
    assert compute_rcm_state(shaft, [0.0], TrocarConfig([0.01, 0.0, -0.1])).outside_shaft
    state = rcm_state_with_jacobian(shaft, [0.0], TrocarConfig([0.01, 0.0, 0.3]))
    assert state.j_shaft.shape == (1, 1)
