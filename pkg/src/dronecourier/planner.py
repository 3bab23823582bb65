"""Cubic uniform B-spline trajectories with collision-aware re-optimization.

A trajectory is a degree-3 uniform B-spline over at least four control points
with knot spacing dt.  Evaluation uses the standard cubic basis matrix over the
four active control points, which makes positions C2-continuous and keeps every
sample inside the convex hull of its active control points.

Re-optimization runs projected gradient descent (numeric central differences,
backtracking line search, hence monotone cost) on the trailing window of
not-yet-flown control points against a soft cost: endpoint attraction,
distance-field collision hinge, second-difference smoothness, sampled
velocity/acceleration hinges, and a penalty on traversing UNKNOWN space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .mapping import CellState, DistanceField, OccupancyRingBuffer
from .world import wrap_angle

# cubic uniform B-spline basis, rows are powers of the segment parameter s
_BASIS = np.array([
    [1.0, 4.0, 1.0, 0.0],
    [-3.0, 0.0, 3.0, 0.0],
    [3.0, -6.0, 3.0, 0.0],
    [-1.0, 3.0, -3.0, 1.0],
]) / 6.0


class SplineSpanError(ValueError):
    """Query time outside the spline's valid span."""


class InfeasibleTrajectoryError(RuntimeError):
    """The optimizer could not push the trajectory clear of obstacles."""


@dataclass(frozen=True)
class PlannerConfig:
    v_max: float = 2.0
    a_max: float = 2.0
    setpoint_rate: float = 2.0
    margin: float = 0.5
    d_max: float = 2.0
    w_endpoint: float = 1.0
    w_collision: float = 10.0
    w_smooth: float = 0.1
    w_limits: float = 1.0
    w_unknown: float = 0.5
    opt_window: int = 6
    opt_iters: int = 50
    step_size: float = 0.1


@dataclass(frozen=True)
class Setpoint:
    position: np.ndarray
    yaw: float
    stamp: float


@dataclass(frozen=True)
class UniformBSpline:
    dt: float
    control_points: np.ndarray   # (m, 3), m >= 4
    t0: float = 0.0
    degree: int = 3

    def __post_init__(self):
        if self.control_points.shape[0] < 4:
            raise ValueError("a cubic spline needs at least 4 control points")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def num_segments(self) -> int:
        return self.control_points.shape[0] - 3

    @property
    def end_time(self) -> float:
        return self.t0 + self.num_segments * self.dt

    def _locate(self, t: float) -> tuple[int, float]:
        if t < self.t0 - 1e-9 or t > self.end_time + 1e-9:
            raise SplineSpanError(f"t={t} outside span [{self.t0}, {self.end_time}]")
        x = (t - self.t0) / self.dt
        seg = min(int(math.floor(x)), self.num_segments - 1)
        seg = max(seg, 0)
        return seg, x - seg

    def evaluate(self, t: float, order: int = 0) -> np.ndarray:
        """Position (order 0), velocity (1) or acceleration (2) at time t."""
        seg, s = self._locate(t)
        if order == 0:
            row = np.array([1.0, s, s * s, s ** 3])
            scale = 1.0
        elif order == 1:
            row = np.array([0.0, 1.0, 2.0 * s, 3.0 * s * s])
            scale = 1.0 / self.dt
        elif order == 2:
            row = np.array([0.0, 0.0, 2.0, 6.0 * s])
            scale = 1.0 / (self.dt * self.dt)
        else:
            raise ValueError("order must be 0, 1 or 2")
        return (row @ _BASIS) @ self.control_points[seg:seg + 4] * scale

    def evaluate_many(self, ts: np.ndarray, order: int = 0) -> np.ndarray:
        """Vectorized evaluate over a sorted or unsorted batch of times within
        the span (clamped at the span ends to absorb rounding)."""
        x = np.clip((ts - self.t0) / self.dt, 0.0, self.num_segments - 1e-12)
        seg = np.minimum(x.astype(np.int64), self.num_segments - 1)
        s = x - seg
        if order == 0:
            rows = np.stack([np.ones_like(s), s, s * s, s ** 3], axis=1)
            scale = 1.0
        elif order == 1:
            rows = np.stack([np.zeros_like(s), np.ones_like(s), 2.0 * s, 3.0 * s * s], axis=1)
            scale = 1.0 / self.dt
        else:
            rows = np.stack([np.zeros_like(s), np.zeros_like(s),
                             np.full_like(s, 2.0), 6.0 * s], axis=1)
            scale = 1.0 / (self.dt * self.dt)
        weights = rows @ _BASIS                                   # (N, 4)
        stacked = np.stack([self.control_points[seg + k] for k in range(4)], axis=1)
        return np.einsum("nk,nkd->nd", weights, stacked) * scale


def plan_initial(start: np.ndarray, start_vel: np.ndarray, goal: np.ndarray,
                 cfg: PlannerConfig, t0: float = 0.0, dt: float = 0.5) -> UniformBSpline:
    """Straight-line seed spline from start to goal.

    The first three control points reproduce the start position and velocity
    (zero initial acceleration); interior points are spaced so the seed is
    traversed within v_max; the goal is triple-clamped so the span end
    interpolates it exactly.
    """
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    start_vel = np.asarray(start_vel, dtype=float)
    spacing = 0.95 * cfg.v_max * dt
    if np.linalg.norm(goal - start) < 1e-9:
        return UniformBSpline(dt=dt, t0=t0, control_points=np.tile(goal, (4, 1)))
    head = [start - dt * start_vel, start.copy(), start + dt * start_vel]
    run = goal - head[-1]
    dist = float(np.linalg.norm(run))
    pts = list(head)
    if dist > 1e-9:
        steps = int(math.floor(dist / spacing))
        direction = run / dist
        for k in range(1, steps + 1):
            pts.append(head[-1] + direction * (k * spacing))
    pts.extend([goal.copy(), goal.copy(), goal.copy()])
    return UniformBSpline(dt=dt, t0=t0, control_points=np.asarray(pts))


def spline_through(waypoints: np.ndarray, cfg: PlannerConfig, t0: float = 0.0,
                   dt: float = 0.5) -> UniformBSpline:
    """Spline whose control polygon is a recorded waypoint list with clamped
    ends; used to retrace a path with the normal tracking machinery."""
    wps = np.asarray(waypoints, dtype=float)
    if wps.ndim != 2 or wps.shape[0] < 1:
        raise ValueError("need at least one waypoint")
    pts = np.vstack([wps[0], wps[0], wps, wps[-1], wps[-1]])
    return UniformBSpline(dt=dt, t0=t0, control_points=pts)


def next_setpoint(spline: UniformBSpline, now: float, cfg: PlannerConfig,
                  scan_yaw: float | None = None) -> Setpoint:
    """Sample the spline one setpoint period ahead; yaw faces the direction of
    travel unless a fixed scan yaw is supplied."""
    t_next = now + 1.0 / cfg.setpoint_rate
    if t_next > spline.end_time + 1e-9 or now < spline.t0 - 1e-9:
        raise SplineSpanError(f"setpoint time {t_next} beyond spline end {spline.end_time}")
    pos = spline.evaluate(t_next, 0)
    if scan_yaw is not None:
        yaw = wrap_angle(scan_yaw)
    else:
        vel = spline.evaluate(t_next, 1)
        speed = float(np.hypot(vel[0], vel[1]))
        yaw = math.atan2(vel[1], vel[0]) if speed > 0.05 else 0.0
    return Setpoint(position=pos, yaw=yaw, stamp=t_next)


@dataclass
class ReoptimizeReport:
    cost_before: float = 0.0
    cost_after: float = 0.0
    iterations: int = 0
    min_clearance: float = 0.0
    history: list = field(default_factory=list)   # accepted cost per iteration


def _first_free_index(spline: UniformBSpline, now: float) -> int:
    """Control points whose influence has been entirely flown are frozen; cp i
    influences segments i-3..i, i.e. times up to t0 + (i+1) dt."""
    m = spline.control_points.shape[0]
    for i in range(m):
        if spline.t0 + (i + 1) * spline.dt > now:
            return i
    return m


def reoptimize(spline: UniformBSpline, dist_field: DistanceField,
               buf: OccupancyRingBuffer, goal: np.ndarray, now: float,
               cfg: PlannerConfig, report: ReoptimizeReport | None = None) -> UniformBSpline:
    """Gradient-descent refinement of the upcoming window of control points.

    Frozen (already flown) control points never move; the window is the first
    cfg.opt_window non-frozen ones, a receding horizon that sweeps over the
    whole trajectory as `now` advances.  The sampled cost terms are evaluated
    on the stretch of the spline the window influences; everything outside it
    is constant under the optimization.  Stops after cfg.opt_iters iterations
    or when an iteration improves the cost by less than 1e-6.  Raises
    InfeasibleTrajectoryError when the refined trajectory still comes closer
    to the occupied region than 0.9 * margin at a dt/10 sampling of the whole
    remaining span.
    """
    goal = np.asarray(goal, dtype=float)
    cps = spline.control_points.copy()
    m = cps.shape[0]
    first_free = _first_free_index(spline, now)
    opt_hi = min(first_free + cfg.opt_window, m)
    # time span influenced by the window (cp i covers segments i-3 .. i)
    lo_t = max(max(now, spline.t0), spline.t0 + (first_free - 3) * spline.dt)
    hi_t = min(spline.end_time, spline.t0 + (opt_hi + 1) * spline.dt)
    step_t = spline.dt / 10.0
    sample_ts = np.arange(lo_t, hi_t + 1e-9, step_t) if hi_t > lo_t else np.empty(0)

    def cost(c: np.ndarray) -> float:
        trial = replace(spline, control_points=c)
        p_end = (c[-3] + 4.0 * c[-2] + c[-1]) / 6.0
        e = cfg.w_endpoint * float(((p_end - goal) ** 2).sum())
        if first_free < m:
            d = dist_field.clearance(c[first_free:])
            viol = np.maximum(cfg.margin - d, 0.0)
            e += cfg.w_collision * float((viol * viol).sum())
        dd = c[2:] - 2.0 * c[1:-1] + c[:-2]
        e += cfg.w_smooth * float((dd * dd).sum())
        if sample_ts.size:
            vel = trial.evaluate_many(sample_ts, 1)
            acc = trial.evaluate_many(sample_ts, 2)
            v_over = np.maximum(np.linalg.norm(vel, axis=1) - cfg.v_max, 0.0)
            a_over = np.maximum(np.linalg.norm(acc, axis=1) - cfg.a_max, 0.0)
            e += cfg.w_limits * float((v_over * v_over).sum() + (a_over * a_over).sum())
            pos = trial.evaluate_many(sample_ts, 0)
            unknown = buf.states_at(pos) == CellState.UNKNOWN
            e += cfg.w_unknown * float(unknown.mean())
        return e

    current = cost(cps)
    if report is not None:
        report.cost_before = current
    iters = 0
    if first_free < opt_hi:
        h = 1e-4
        for _ in range(cfg.opt_iters):
            grad = np.zeros((opt_hi - first_free, 3))
            for i in range(first_free, opt_hi):
                for a in range(3):
                    old = cps[i, a]
                    cps[i, a] = old + h
                    up = cost(cps)
                    cps[i, a] = old - h
                    down = cost(cps)
                    cps[i, a] = old
                    grad[i - first_free, a] = (up - down) / (2.0 * h)
            gnorm = float(np.abs(grad).max())
            if gnorm < 1e-12:
                break
            step = cfg.step_size / gnorm
            improvement = 0.0
            improved = False
            for _ in range(12):
                trial = cps.copy()
                trial[first_free:opt_hi] -= step * grad
                trial_cost = cost(trial)
                if trial_cost < current:
                    improvement = current - trial_cost
                    cps, current = trial, trial_cost
                    improved = True
                    break
                step *= 0.5
            iters += 1
            if report is not None and improved:
                report.history.append(current)
            if not improved or improvement < 1e-6:
                break

    out = replace(spline, control_points=cps)
    check_ts = np.arange(max(now, spline.t0), spline.end_time + 1e-9, step_t)
    if check_ts.size:
        clear = dist_field.clearance(out.evaluate_many(check_ts, 0))
        min_clear = float(clear.min())
    else:
        min_clear = dist_field.d_max
    if report is not None:
        report.cost_after = current
        report.iterations = iters
        report.min_clearance = min_clear
    if min_clear < 0.9 * cfg.margin:
        raise InfeasibleTrajectoryError(
            f"min clearance {min_clear:.3f} m below 0.9 * margin ({0.9 * cfg.margin:.3f} m)")
    return out
