# control/otg.py
"""
Per-axis online trajectory generator: bounded velocity and acceleration,
discrete-time braking so an axis stops on the target instead of ringing.
Axes are independent (no time synchronization).
"""

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from errors import ConfigError

ArrayLike = Union[float, Sequence[float], np.ndarray]


@dataclass(frozen=True)
class OtgLimits:
    v_max: ArrayLike = 300.0
    a_max: ArrayLike = 1500.0

    def __post_init__(self):
        v = np.asarray(self.v_max, dtype=float)
        a = np.asarray(self.a_max, dtype=float)
        if np.any(v <= 0) or np.any(a <= 0) or not (np.all(np.isfinite(v)) and np.all(np.isfinite(a))):
            raise ConfigError(f"OTG limits must be positive and finite (v_max={self.v_max}, a_max={self.a_max})")


@dataclass(frozen=True)
class OtgState:
    pos: np.ndarray
    vel: np.ndarray

    @classmethod
    def at_rest(cls, pos: ArrayLike) -> "OtgState":
        pos = np.array(pos, dtype=float).reshape(-1)
        return cls(pos=pos, vel=np.zeros_like(pos))


def otg_step(state: OtgState, target_pos: ArrayLike, limits: OtgLimits, dt: float) -> OtgState:
    if dt <= 0:
        raise ConfigError(f"OTG time step must be positive, got {dt}")
    v_max = np.asarray(limits.v_max, dtype=float)
    accel_step = np.asarray(limits.a_max, dtype=float) * dt

    dx = np.asarray(target_pos, dtype=float) - state.pos
    dist = np.abs(dx)
    # largest speed that can still be braked to zero in steps of accel_step within dist
    v_brake = accel_step * (np.sqrt(0.25 + 2.0 * dist / (accel_step * dt)) - 0.5)
    v_des = np.sign(dx) * np.minimum(np.minimum(v_max, v_brake), dist / dt)

    dv = np.clip(v_des - state.vel, -accel_step, accel_step)
    vel = np.clip(state.vel + dv, -v_max, v_max)
    return OtgState(pos=state.pos + vel * dt, vel=vel)
