"""Kinematic setpoint-tracking flight controller.

PD position control on a double integrator with acceleration, velocity and yaw
rate clamps, integrated with symplectic Euler.  Gains are overdamped so step
responses do not overshoot.  The controller knows nothing about obstacles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .planner import Setpoint
from .world import wrap_angle

KP = 2.0
KD = 3.0
V_PHYS_MAX = 5.0   # hard physical clamp, m/s


@dataclass(frozen=True)
class ControlLimits:
    v_max: float = 2.0
    a_max: float = 2.0
    yaw_rate_max: float = 1.5


@dataclass(frozen=True)
class DroneState:
    position: np.ndarray
    velocity: np.ndarray
    yaw: float
    yaw_rate: float = 0.0


def _clip_norm(v: np.ndarray, limit: float) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n > limit and n > 0.0:
        return v * (limit / n)
    return v


def step(state: DroneState, setpoint: Setpoint, dt: float,
         limits: ControlLimits) -> DroneState:
    """Advance the closed loop by one physics step (dt in (0, 0.1])."""
    if not (0.0 < dt <= 0.1):
        raise ValueError("dt must lie in (0, 0.1]")
    err = setpoint.position - state.position
    acc = _clip_norm(KP * err - KD * state.velocity, limits.a_max)
    vel = _clip_norm(state.velocity + acc * dt, min(limits.v_max, V_PHYS_MAX))
    pos = state.position + vel * dt
    yaw_err = wrap_angle(setpoint.yaw - state.yaw)
    dyaw = float(np.clip(yaw_err, -limits.yaw_rate_max * dt, limits.yaw_rate_max * dt))
    return DroneState(position=pos, velocity=vel,
                      yaw=wrap_angle(state.yaw + dyaw), yaw_rate=dyaw / dt)


def takeoff_land(state: DroneState, target_altitude: float, dt: float,
                 limits: ControlLimits) -> DroneState:
    """Vertical-only tracking toward target_altitude at the current x, y."""
    if target_altitude < 0:
        raise ValueError("target_altitude must be >= 0")
    sp = Setpoint(position=np.array([state.position[0], state.position[1],
                                     float(target_altitude)]),
                  yaw=state.yaw, stamp=0.0)
    return step(state, sp, dt, limits)


def is_landed(state: DroneState, target_altitude: float) -> bool:
    return target_altitude == 0.0 and state.position[2] <= 0.05
