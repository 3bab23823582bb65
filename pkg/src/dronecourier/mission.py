"""Mission executive: the state machine that flies the delivery.

Drives takeoff, the GPS transit to the descent channel, the scanning descent,
the planner-guided approach to the detected marker, the simulated drop-off,
the same-path return and the landing; failures divert into an abort climb and
end in FAILED instead of DONE.  State estimation fuses GPS above the rooftops
with the anchored visual-odometry estimate below them.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .mapping import DistanceField, OccupancyRingBuffer
from .marker_tracker import MarkerDetection
from .planner import (InfeasibleTrajectoryError, PlannerConfig, ReoptimizeReport,
                      Setpoint, SplineSpanError, UniformBSpline, next_setpoint,
                      plan_initial, reoptimize, spline_through)
from .sensors import GpsFix, OdomEstimate, camera_rotation
from .world import Frame, Pose, Scenario, wrap_angle


class MissionState(Enum):
    IDLE = "IDLE"
    TAKEOFF = "TAKEOFF"
    GPS_TRANSIT = "GPS_TRANSIT"
    DESCENT_SCAN = "DESCENT_SCAN"
    MARKER_APPROACH = "MARKER_APPROACH"
    DROP_OFF = "DROP_OFF"
    RETURN = "RETURN"
    ASCEND_ABORT = "ASCEND_ABORT"
    LAND = "LAND"
    FAILED = "FAILED"
    DONE = "DONE"


ALLOWED_TRANSITIONS = {
    (MissionState.IDLE, MissionState.TAKEOFF),
    (MissionState.TAKEOFF, MissionState.GPS_TRANSIT),
    (MissionState.GPS_TRANSIT, MissionState.DESCENT_SCAN),
    (MissionState.GPS_TRANSIT, MissionState.LAND),
    (MissionState.DESCENT_SCAN, MissionState.MARKER_APPROACH),
    (MissionState.DESCENT_SCAN, MissionState.ASCEND_ABORT),
    (MissionState.MARKER_APPROACH, MissionState.DROP_OFF),
    (MissionState.MARKER_APPROACH, MissionState.ASCEND_ABORT),
    (MissionState.DROP_OFF, MissionState.RETURN),
    (MissionState.RETURN, MissionState.GPS_TRANSIT),
    (MissionState.ASCEND_ABORT, MissionState.GPS_TRANSIT),
    (MissionState.LAND, MissionState.DONE),
    (MissionState.LAND, MissionState.FAILED),
}

# tuning of the executive itself
K_MIN_DETECTIONS = 5
DESCENT_RATE = 0.5            # m/s, scanning descent
ARRIVAL_TOLERANCE = 0.3       # m, drop-off point
CHANNEL_ENTRY_TOLERANCE = 1.0  # m horizontal
LANDING_ENTRY_TOLERANCE = 1.0  # m horizontal above home
DETECTION_LOST_TIMEOUT = 5.0  # s
HOLD_BEFORE_ABORT = 3.0       # s
DROPOFF_HOVER = 3.0           # s
WAYPOINT_SPACING = 0.5        # m of travel between recorded waypoints
ALTITUDE_TOLERANCE = 0.3      # m, takeoff / climb completion


class EmptyPathError(RuntimeError):
    """No approach waypoints were recorded before a reversal was requested."""


@dataclass
class MarkerFilter:
    """Componentwise median over the last k world-frame detections."""

    k_min: int = K_MIN_DETECTIONS
    window: deque = field(default_factory=lambda: deque(maxlen=K_MIN_DETECTIONS))
    count: int = 0

    def add(self, position_world: np.ndarray) -> None:
        self.window.append(np.asarray(position_world, dtype=float))
        self.count += 1

    @property
    def filtered_position(self) -> np.ndarray | None:
        if self.count < self.k_min:
            return None
        return np.median(np.stack(self.window), axis=0)


@dataclass
class AnchorState:
    """ODOM -> WORLD translation offset, re-anchored while GPS is healthy."""

    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    initialized: bool = False


def fuse_state(gps: GpsFix, odom: OdomEstimate, rooftop_height: float,
               anchor: AnchorState, alpha: float = 0.1) -> Pose:
    """Fused world pose: the GPS fix above the rooftop (while continuously
    re-anchoring the odometry offset with a low-pass), the anchored odometry
    below it, where multipath makes GPS unusable."""
    if not gps.degraded:
        target = gps.position - odom.position
        if not anchor.initialized:
            anchor.offset = target.copy()
            anchor.initialized = True
        else:
            anchor.offset = (1.0 - alpha) * anchor.offset + alpha * target
        position = gps.position
    else:
        position = odom.position + anchor.offset
    return Pose(position=np.asarray(position, dtype=float), yaw=odom.yaw,
                frame=Frame.WORLD)


@dataclass(frozen=True)
class TimedDetection:
    clock: float
    detection: MarkerDetection
    fused_pose: Pose          # fused estimate at capture time


@dataclass(frozen=True)
class MissionInputs:
    state_estimate: Pose
    gps: GpsFix
    odom: OdomEstimate
    detections: tuple[TimedDetection, ...]
    clock: float
    landed: bool = False     # touchdown signal from the flight controller


@dataclass
class TickResult:
    state: MissionState
    setpoint: Setpoint | None
    events: list


def detection_to_world(det: MarkerDetection, fused_pose: Pose) -> np.ndarray:
    """Marker world position: fused pose composed with the front-camera
    extrinsics (camera at the body origin looking along body +x)."""
    return fused_pose.position + camera_rotation(fused_pose.yaw) @ det.position_cam


class Mission:
    """Stateful executive ticked at the setpoint rate."""

    def __init__(self, scenario: Scenario, cfg: PlannerConfig):
        self.scenario = scenario
        self.cfg = cfg
        self.state = MissionState.IDLE
        self.anchor = AnchorState()
        self.marker_filter = MarkerFilter()
        self.scan_yaw = wrap_angle(scenario.marker.normal_yaw + math.pi)
        self.path_waypoints: list[np.ndarray] = []
        self._last_recorded: np.ndarray | None = None
        self.spline: UniformBSpline | None = None
        self.goal: np.ndarray | None = None
        self.delivered = False
        self.marker_world_estimate: np.ndarray | None = None
        self._last_detection_clock: float | None = None
        self._hold_until: float | None = None
        self._hover_until: float | None = None
        self._descend_target: float | None = None
        self._outbound = True

    # -- helpers -------------------------------------------------------------

    def _transition(self, new_state: MissionState, reason: str, clock: float,
                    events: list) -> None:
        assert (self.state, new_state) in ALLOWED_TRANSITIONS, \
            f"illegal transition {self.state} -> {new_state}"
        events.append({"type": "state_transition", "t": clock,
                       "from": self.state.value, "to": new_state.value,
                       "reason": reason})
        self.state = new_state

    def _record_waypoint(self, position: np.ndarray) -> None:
        if (self._last_recorded is None
                or np.linalg.norm(position - self._last_recorded) >= WAYPOINT_SPACING):
            self.path_waypoints.append(position.copy())
            self._last_recorded = position.copy()

    def record_and_reverse_path(self) -> list[np.ndarray]:
        if not self.path_waypoints:
            raise EmptyPathError("no approach waypoints recorded")
        return list(reversed(self.path_waypoints))

    def _hold_setpoint(self, position: np.ndarray, clock: float,
                       yaw: float | None = None) -> Setpoint:
        return Setpoint(position=position.copy(),
                        yaw=self.scan_yaw if yaw is None else yaw,
                        stamp=clock + 1.0 / self.cfg.setpoint_rate)

    def _track_spline(self, inputs: MissionInputs, dist_field: DistanceField,
                      buf: OccupancyRingBuffer, events: list,
                      scan_yaw: float | None, raise_infeasible: bool = False) -> Setpoint:
        """Re-optimize the current spline and sample the next setpoint; holds
        the goal once the spline span is exhausted."""
        report = ReoptimizeReport()
        try:
            self.spline = reoptimize(self.spline, dist_field, buf, self.goal,
                                     inputs.clock, self.cfg, report)
        except InfeasibleTrajectoryError:
            if raise_infeasible:
                raise
            # outside the approach there is no abort policy; hold and let the
            # next tick retry against a fresher map
            events.append({"type": "event", "t": inputs.clock, "name": "infeasible_hold"})
            return self._hold_setpoint(inputs.state_estimate.position, inputs.clock,
                                       yaw=scan_yaw)
        events.append({"type": "reoptimization", "t": inputs.clock,
                       "cost_before": report.cost_before,
                       "cost_after": report.cost_after,
                       "iterations": report.iterations,
                       "min_clearance": report.min_clearance})
        try:
            return next_setpoint(self.spline, inputs.clock, self.cfg, scan_yaw)
        except SplineSpanError:
            return self._hold_setpoint(self.goal, inputs.clock, yaw=scan_yaw)

    def _ingest_detections(self, inputs: MissionInputs) -> None:
        for timed in inputs.detections:
            world = detection_to_world(timed.detection, timed.fused_pose)
            self.marker_filter.add(world)
            self._last_detection_clock = timed.clock

    # -- the tick ------------------------------------------------------------

    def tick(self, inputs: MissionInputs, dist_field: DistanceField,
             buf: OccupancyRingBuffer) -> TickResult:
        events: list = []
        sc = self.scenario
        pos = inputs.state_estimate.position
        clock = inputs.clock

        if self.state == MissionState.IDLE:
            self._transition(MissionState.TAKEOFF, "start", clock, events)
            return TickResult(self.state, self._hold_setpoint(
                np.array([sc.home[0], sc.home[1], sc.cruise_altitude]), clock,
                yaw=inputs.state_estimate.yaw), events)

        if self.state == MissionState.TAKEOFF:
            target = np.array([sc.home[0], sc.home[1], sc.cruise_altitude])
            if abs(pos[2] - sc.cruise_altitude) <= ALTITUDE_TOLERANCE:
                self._transition(MissionState.GPS_TRANSIT, "reached cruise altitude",
                                 clock, events)
                self.goal = np.array([sc.channel_top[0], sc.channel_top[1],
                                      sc.cruise_altitude])
                self.spline = plan_initial(pos, np.zeros(3), self.goal, self.cfg,
                                           t0=clock)
                sp = self._track_spline(inputs, dist_field, buf, events, None)
                return TickResult(self.state, sp, events)
            return TickResult(self.state, self._hold_setpoint(
                target, clock, yaw=inputs.state_estimate.yaw), events)

        if self.state == MissionState.GPS_TRANSIT:
            if self._outbound:
                horiz = np.hypot(pos[0] - sc.channel_top[0], pos[1] - sc.channel_top[1])
                if horiz <= CHANNEL_ENTRY_TOLERANCE:
                    self._transition(MissionState.DESCENT_SCAN, "over descent channel",
                                     clock, events)
                    self.spline = None
                    self._descend_target = pos[2]
                    self._record_waypoint(pos)
                    return TickResult(self.state, self._hold_setpoint(
                        np.array([sc.channel_top[0], sc.channel_top[1], pos[2]]),
                        clock), events)
            else:
                horiz = np.hypot(pos[0] - sc.home[0], pos[1] - sc.home[1])
                if horiz <= LANDING_ENTRY_TOLERANCE:
                    self._transition(MissionState.LAND, "over home", clock, events)
                    self.spline = None
                    return TickResult(self.state, self._hold_setpoint(
                        np.array([sc.home[0], sc.home[1], 0.0]), clock,
                        yaw=inputs.state_estimate.yaw), events)
            sp = self._track_spline(inputs, dist_field, buf, events, None)
            return TickResult(self.state, sp, events)

        if self.state == MissionState.DESCENT_SCAN:
            self._ingest_detections(inputs)
            self._record_waypoint(pos)
            filtered = self.marker_filter.filtered_position
            if filtered is not None:
                self.marker_world_estimate = filtered
                self.goal = filtered + sc.drop_offset * sc.marker.normal()
                self._transition(MissionState.MARKER_APPROACH,
                                 f"marker locked after {self.marker_filter.count} detections",
                                 clock, events)
                self.spline = plan_initial(pos, np.zeros(3), self.goal, self.cfg,
                                           t0=clock)
                sp = self._track_spline(inputs, dist_field, buf, events, self.scan_yaw)
                return TickResult(self.state, sp, events)
            if pos[2] <= sc.channel_bottom_altitude + 0.05:
                self._transition(MissionState.ASCEND_ABORT,
                                 "reached channel bottom without detection",
                                 clock, events)
                self.goal = sc.channel_top.copy()
                self.spline = plan_initial(pos, np.zeros(3), self.goal, self.cfg,
                                           t0=clock)
                sp = self._track_spline(inputs, dist_field, buf, events, self.scan_yaw)
                return TickResult(self.state, sp, events)
            tick_dt = 1.0 / self.cfg.setpoint_rate
            self._descend_target = max(sc.channel_bottom_altitude,
                                       self._descend_target - DESCENT_RATE * tick_dt)
            sp = Setpoint(position=np.array([sc.channel_top[0], sc.channel_top[1],
                                             self._descend_target]),
                          yaw=self.scan_yaw, stamp=clock + tick_dt)
            return TickResult(self.state, sp, events)

        if self.state == MissionState.MARKER_APPROACH:
            self._ingest_detections(inputs)
            self._record_waypoint(pos)
            if self._hold_until is not None:
                if clock >= self._hold_until:
                    self._hold_until = None
                    self._transition(MissionState.ASCEND_ABORT, "approach aborted",
                                     clock, events)
                    self.goal = sc.channel_top.copy()
                    self.spline = plan_initial(pos, np.zeros(3), self.goal, self.cfg,
                                               t0=clock)
                    sp = self._track_spline(inputs, dist_field, buf, events,
                                            self.scan_yaw)
                    return TickResult(self.state, sp, events)
                return TickResult(self.state, self._hold_setpoint(pos, clock), events)
            if np.linalg.norm(pos - self.goal) <= ARRIVAL_TOLERANCE:
                self._transition(MissionState.DROP_OFF, "arrived at drop-off point",
                                 clock, events)
                self._hover_until = clock + DROPOFF_HOVER
                return TickResult(self.state, self._hold_setpoint(self.goal, clock),
                                  events)
            lost = (self._last_detection_clock is not None
                    and clock - self._last_detection_clock > DETECTION_LOST_TIMEOUT)
            if lost:
                self._hold_until = clock + HOLD_BEFORE_ABORT
                events.append({"type": "event", "t": clock, "name": "detection_lost_hold"})
                return TickResult(self.state, self._hold_setpoint(pos, clock), events)
            try:
                sp = self._track_spline(inputs, dist_field, buf, events, self.scan_yaw,
                                        raise_infeasible=True)
            except InfeasibleTrajectoryError:
                self._hold_until = clock + HOLD_BEFORE_ABORT
                events.append({"type": "event", "t": clock, "name": "infeasible_hold"})
                return TickResult(self.state, self._hold_setpoint(pos, clock), events)
            return TickResult(self.state, sp, events)

        if self.state == MissionState.DROP_OFF:
            if clock >= self._hover_until:
                events.append({"type": "event", "t": clock, "name": "package_released"})
                self.delivered = True
                self._transition(MissionState.RETURN, "package released", clock, events)
                reverse = self.record_and_reverse_path()
                self.goal = reverse[-1].copy()
                self.spline = spline_through(np.asarray(reverse), self.cfg, t0=clock)
                sp = self._track_spline(inputs, dist_field, buf, events, self.scan_yaw)
                return TickResult(self.state, sp, events)
            return TickResult(self.state, self._hold_setpoint(self.goal, clock), events)

        if self.state == MissionState.RETURN:
            done = (inputs.clock > self.spline.end_time
                    and np.linalg.norm(pos - self.goal) <= CHANNEL_ENTRY_TOLERANCE)
            if done:
                self._outbound = False
                self._transition(MissionState.GPS_TRANSIT, "retrace complete", clock,
                                 events)
                self.goal = np.array([sc.home[0], sc.home[1], sc.cruise_altitude])
                self.spline = plan_initial(pos, np.zeros(3), self.goal, self.cfg,
                                           t0=clock)
                sp = self._track_spline(inputs, dist_field, buf, events, None)
                return TickResult(self.state, sp, events)
            sp = self._track_spline(inputs, dist_field, buf, events, self.scan_yaw)
            return TickResult(self.state, sp, events)

        if self.state == MissionState.ASCEND_ABORT:
            reached = abs(pos[2] - sc.channel_top[2]) <= ALTITUDE_TOLERANCE and \
                np.hypot(pos[0] - sc.channel_top[0], pos[1] - sc.channel_top[1]) <= CHANNEL_ENTRY_TOLERANCE
            if reached:
                self._outbound = False
                self._transition(MissionState.GPS_TRANSIT, "abort climb complete",
                                 clock, events)
                self.goal = np.array([sc.home[0], sc.home[1], sc.cruise_altitude])
                self.spline = plan_initial(pos, np.zeros(3), self.goal, self.cfg,
                                           t0=clock)
                sp = self._track_spline(inputs, dist_field, buf, events, None)
                return TickResult(self.state, sp, events)
            sp = self._track_spline(inputs, dist_field, buf, events, self.scan_yaw)
            return TickResult(self.state, sp, events)

        if self.state == MissionState.LAND:
            if inputs.landed:
                outcome = MissionState.DONE if self.delivered else MissionState.FAILED
                self._transition(outcome, "landed", clock, events)
                return TickResult(self.state, None, events)
            return TickResult(self.state, self._hold_setpoint(
                np.array([sc.home[0], sc.home[1], 0.0]), clock,
                yaw=inputs.state_estimate.yaw), events)

        return TickResult(self.state, None, events)
