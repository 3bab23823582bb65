from __future__ import annotations

import numpy as np
import pytest

from dronecourier.autopilot import (ControlLimits, DroneState, is_landed, step,
                                    takeoff_land)
from dronecourier.planner import Setpoint

LIMITS = ControlLimits(v_max=2.0, a_max=2.0, yaw_rate_max=1.5)
DT = 0.02


def hover_state(pos=(0.0, 0.0, 0.0), yaw=0.0):
    return DroneState(position=np.asarray(pos, dtype=float), velocity=np.zeros(3),
                      yaw=yaw)


def sp(pos, yaw=0.0):
    return Setpoint(position=np.asarray(pos, dtype=float), yaw=yaw, stamp=0.0)


def test_equilibrium_is_exact():
    s = hover_state((1.0, 2.0, 3.0))
    s2 = step(s, sp((1.0, 2.0, 3.0)), DT, LIMITS)
    assert np.array_equal(s2.position, s.position)
    assert np.array_equal(s2.velocity, s.velocity)


def test_unit_step_response():
    s = hover_state()
    target = sp((1.0, 0.0, 0.0))
    settle = None
    max_x = 0.0
    for k in range(int(5.0 / DT)):
        s = step(s, target, DT, LIMITS)
        max_x = max(max_x, s.position[0])
        if settle is None and abs(s.position[0] - 1.0) <= 0.05:
            settle = (k + 1) * DT
    assert settle is not None and settle <= 5.0
    assert max_x - 1.0 <= 0.1  # overdamped gains: no meaningful overshoot


def test_velocity_clamp_on_far_setpoint():
    s = hover_state()
    target = sp((100.0, 0.0, 0.0))
    for _ in range(500):
        s = step(s, target, DT, LIMITS)
        assert np.linalg.norm(s.velocity) <= LIMITS.v_max + 1e-12


def test_takeoff_monotone_altitude():
    s = hover_state()
    prev = 0.0
    reached = False
    for _ in range(int(30.0 / DT)):
        s = takeoff_land(s, 30.0, DT, LIMITS)
        assert s.position[2] >= prev - 1e-12
        prev = s.position[2]
        if abs(s.position[2] - 30.0) <= 0.1:
            reached = True
            break
    assert reached


def test_landed_immediately_when_on_ground():
    assert is_landed(hover_state(), 0.0)


def test_midair_retarget_keeps_velocity_continuous():
    s = hover_state()
    for _ in range(100):
        s = takeoff_land(s, 10.0, DT, LIMITS)
    v_before = s.velocity.copy()
    s2 = takeoff_land(s, 25.0, DT, LIMITS)  # retarget upward mid-climb
    assert np.linalg.norm(s2.velocity - v_before) <= LIMITS.a_max * DT + 1e-12


def test_hover_for_60_seconds_has_zero_drift():
    s = hover_state((5.0, -3.0, 12.0))
    target = sp((5.0, -3.0, 12.0))
    for _ in range(int(60.0 / DT)):
        s = step(s, target, DT, LIMITS)
    assert np.array_equal(s.position, np.array([5.0, -3.0, 12.0]))


def test_convergence_distance_eventually_monotone():
    s = hover_state()
    target = sp((4.0, 3.0, 2.0))
    dists = []
    for _ in range(int(30.0 / DT)):
        s = step(s, target, DT, LIMITS)
        dists.append(float(np.linalg.norm(s.position - target.position)))
    assert dists[-1] <= 0.05
    tail = dists[len(dists) // 2:]
    assert all(b <= a + 1e-12 for a, b in zip(tail, tail[1:]))


def test_step_is_deterministic():
    s = hover_state((0.3, 0.7, 1.1))
    target = sp((2.0, -1.0, 4.0), yaw=0.5)
    a = step(s, target, DT, LIMITS)
    b = step(s, target, DT, LIMITS)
    assert np.array_equal(a.position, b.position)
    assert np.array_equal(a.velocity, b.velocity)
    assert a.yaw == b.yaw


def test_yaw_slew_limited():
    s = hover_state(yaw=0.0)
    target = sp((0.0, 0.0, 0.0), yaw=3.0)
    s2 = step(s, target, DT, LIMITS)
    assert abs(s2.yaw) <= LIMITS.yaw_rate_max * DT + 1e-12


def test_step_rejects_bad_dt():
    with pytest.raises(ValueError):
        step(hover_state(), sp((0, 0, 0)), 0.2, LIMITS)
