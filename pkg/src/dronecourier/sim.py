"""Fixed-step headless simulation: wires sensors, mapping, mission and the
autopilot together, writes the JSONL trace and the metrics report.

The loop runs physics at 50 Hz; the depth and front cameras sample at 10 Hz,
GPS at 5 Hz, odometry every step and the mission executive (which also owns
the planner) at the 2 Hz setpoint rate.  Everything is driven by named seeded
streams, so a run is a pure function of (scenario, seed).
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autopilot
from .autopilot import ControlLimits, DroneState
from .mapping import OccupancyRingBuffer, compute_distance_field
from .marker_tracker import detect
from .mission import (Mission, MissionInputs, MissionState, TimedDetection,
                      fuse_state)
from .planner import PlannerConfig, Setpoint
from .sensors import (GpsSensor, OdomEstimate, marker_in_frustum, render_depth,
                      render_marker_view, vo_step, write_pgm_depth16,
                      write_pgm_gray)
from .world import Frame, Pose, Scenario, clearance_to_boxes, load_scenario

PHYSICS_HZ = 50.0
PHYSICS_DT = 1.0 / PHYSICS_HZ
DEPTH_PERIOD = 5          # 10 Hz
FRONT_CAM_PERIOD = 5      # 10 Hz
GPS_PERIOD = 10           # 5 Hz
TICK_PERIOD = 25          # 2 Hz mission/planner
TRACE_STATE_PERIOD = 5    # 10 Hz true-state trace records
IMAGE_DUMP_PERIOD = 50    # 1 Hz when image dumping is on

RING_BUFFER_N = 64
RING_BUFFER_RESOLUTION = 0.2

_SCAN_STATES = (MissionState.DESCENT_SCAN, MissionState.MARKER_APPROACH)
_TERMINAL = (MissionState.DONE, MissionState.FAILED)


def stream_rng(seed: int, label: str) -> np.random.Generator:
    """Named deterministic stream derived from the scenario seed."""
    digest = hashlib.sha256(label.encode()).digest()
    return np.random.default_rng(np.random.SeedSequence(
        [int(seed), int.from_bytes(digest[:8], "big")]))


@dataclass
class MetricsReport:
    outcome: str
    time_to_detection: float | None
    time_total: float
    min_true_clearance: float
    path_length: float
    marker_estimate_error: float | None
    detection_latency_ms: dict
    setpoint_count: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "time_to_detection": self.time_to_detection,
            "time_total": self.time_total,
            "min_true_clearance": self.min_true_clearance,
            "path_length": self.path_length,
            "marker_estimate_error": self.marker_estimate_error,
            "detection_latency_ms": self.detection_latency_ms,
            "setpoint_count": self.setpoint_count,
            "seed": self.seed,
        }


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, float)):
        return round(float(value), 9)
    if isinstance(value, np.integer):
        return int(value)
    return value


class TraceWriter:
    def __init__(self):
        self.records: list[dict] = []

    def add(self, record: dict) -> None:
        self.records.append(_jsonable(record))

    def write(self, path: Path) -> None:
        with open(path, "w") as f:
            for rec in self.records:
                f.write(json.dumps(rec, separators=(",", ":")) + "\n")


def run(scenario_path: str | Path, seed_override: int | None = None,
        out_dir: str | Path = "out", dump_images: bool = False,
        dump_occupancy_every: int | None = None,
        max_sim_time: float = 300.0,
        planner_cfg: PlannerConfig | None = None) -> MetricsReport:
    """Run one delivery mission; returns the metrics (also written to disk
    together with trace.jsonl and any requested debug dumps)."""
    scenario = load_scenario(scenario_path)
    seed = int(seed_override) if seed_override is not None else scenario.seed
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    images_dir = out / "images"
    if dump_images:
        images_dir.mkdir(exist_ok=True)

    cfg = planner_cfg or PlannerConfig()
    sc = scenario
    rng_gps = stream_rng(seed, "gps")
    rng_vo = stream_rng(seed, "vo")
    rng_depth = stream_rng(seed, "depth")

    gps_sensor = GpsSensor(sc.noise, sc.rooftop_height, rng_gps)
    odom = OdomEstimate(position=np.zeros(3), yaw=0.0, accumulated_drift=np.zeros(3))
    state = DroneState(position=sc.home.copy(), velocity=np.zeros(3), yaw=0.0)
    limits = ControlLimits(v_max=cfg.v_max, a_max=cfg.a_max)
    mission = Mission(sc, cfg)
    buf = OccupancyRingBuffer(RING_BUFFER_N, RING_BUFFER_RESOLUTION, sc.home)
    dist_field = compute_distance_field(buf, cfg.d_max)

    trace = TraceWriter()
    trace.add({"type": "run_header", "t": 0.0, "scenario": str(scenario_path),
               "seed": seed, "physics_hz": PHYSICS_HZ, "setpoint_rate": cfg.setpoint_rate})

    gps_fix = gps_sensor.measure(state.position)
    anchor = mission.anchor
    fuse_state(gps_fix, odom, sc.rooftop_height, anchor)

    current_setpoint: Setpoint | None = None
    pending_detections: list[TimedDetection] = []
    latencies_ms: list[float] = []
    frame_id = 0
    setpoint_count = 0
    min_clearance = math.inf
    path_length = 0.0
    time_to_detection: float | None = None
    outcome = "TIMEOUT"
    t = 0.0

    max_steps = int(round(max_sim_time * PHYSICS_HZ))
    for k in range(max_steps + 1):
        t = k / PHYSICS_HZ

        if k % GPS_PERIOD == 0:
            gps_fix = gps_sensor.measure(state.position)
            fuse_state(gps_fix, odom, sc.rooftop_height, anchor)
        if gps_fix.degraded:
            fused = Pose(position=odom.position + anchor.offset, yaw=odom.yaw,
                         frame=Frame.WORLD)
        else:
            fused = Pose(position=gps_fix.position, yaw=odom.yaw, frame=Frame.WORLD)

        true_cam_pose = Pose(position=state.position.copy(), yaw=state.yaw,
                             frame=Frame.WORLD)

        if k % DEPTH_PERIOD == 0:
            depth = render_depth(sc.world, true_cam_pose, sc.cameras.front_depth,
                                 sc.depth_max_range, sc.noise.depth_noise_sigma,
                                 rng_depth)
            buf.move_volume(fused.position)
            buf.insert_depth(fused, depth, sc.depth_max_range)
            if dump_images and k % IMAGE_DUMP_PERIOD == 0:
                write_pgm_depth16(images_dir / f"depth_{k:06d}.pgm", depth)

        if k % FRONT_CAM_PERIOD == 0 and mission.state in _SCAN_STATES:
            frame_id += 1
            detection = None
            if marker_in_frustum(sc.marker, true_cam_pose, sc.cameras.front):
                frame = render_marker_view(sc.world, sc.marker, true_cam_pose,
                                           sc.cameras.front)
                t_start = time.perf_counter()
                detection = detect(frame, sc.cameras.front, sc.marker)
                latencies_ms.append((time.perf_counter() - t_start) * 1e3)
                if dump_images and k % IMAGE_DUMP_PERIOD == 0:
                    write_pgm_gray(images_dir / f"front_{k:06d}.pgm", frame)
            if detection is not None:
                pending_detections.append(TimedDetection(clock=t, detection=detection,
                                                         fused_pose=fused))
                if time_to_detection is None:
                    time_to_detection = t
                trace.add({"type": "detection", "t": t, "frame": frame_id,
                           "detected": True,
                           "center_px": list(detection.ellipse.center_px),
                           "z_est": detection.position_cam[2]})
            else:
                trace.add({"type": "detection", "t": t, "frame": frame_id,
                           "detected": False, "center_px": None, "z_est": None})

        if k % TICK_PERIOD == 0:
            if mission.state not in _TERMINAL:
                dist_field = compute_distance_field(buf, cfg.d_max)
            inputs = MissionInputs(state_estimate=fused, gps=gps_fix, odom=odom,
                                   detections=tuple(pending_detections), clock=t,
                                   landed=autopilot.is_landed(state, 0.0))
            pending_detections.clear()
            result = mission.tick(inputs, dist_field, buf)
            for ev in result.events:
                trace.add(ev)
            if result.setpoint is not None:
                current_setpoint = result.setpoint
                setpoint_count += 1
                trace.add({"type": "setpoint", "t": t,
                           "pos": current_setpoint.position,
                           "yaw": current_setpoint.yaw,
                           "stamp": current_setpoint.stamp,
                           "state": mission.state.value})
            if dump_occupancy_every and (k // TICK_PERIOD) % dump_occupancy_every == 0:
                _dump_occupancy(buf, out / f"occupancy_{k:06d}.csv")
            if mission.state in _TERMINAL:
                outcome = "DONE" if mission.state is MissionState.DONE else "FAILED"
                break

        if current_setpoint is not None:
            prev_pos, prev_yaw = state.position, state.yaw
            state = autopilot.step(state, current_setpoint, PHYSICS_DT, limits)
            delta = state.position - prev_pos
            path_length += float(np.linalg.norm(delta))
            odom = vo_step(odom, delta, state.yaw - prev_yaw, sc.noise, rng_vo)

        clearance = clearance_to_boxes(sc.world, state.position)
        min_clearance = min(min_clearance, clearance)
        if clearance < sc.drone_radius:
            trace.add({"type": "event", "t": t, "name": "collision",
                       "pos": state.position})
            outcome = "CRASHED"
            break

        if k % TRACE_STATE_PERIOD == 0:
            trace.add({"type": "drone_state", "t": t, "pos": state.position,
                       "vel": state.velocity, "yaw": state.yaw,
                       "clearance": None if math.isinf(clearance) else clearance})

    trace.add({"type": "run_end", "t": t, "outcome": outcome})
    trace.write(out / "trace.jsonl")

    marker_err = None
    if mission.marker_world_estimate is not None:
        marker_err = float(np.linalg.norm(mission.marker_world_estimate
                                          - sc.marker.center))
    latency = {"avg": float(np.mean(latencies_ms)) if latencies_ms else None,
               "max": float(np.max(latencies_ms)) if latencies_ms else None}
    report = MetricsReport(
        outcome=outcome, time_to_detection=time_to_detection, time_total=t,
        min_true_clearance=0.0 if math.isinf(min_clearance) else float(min_clearance),
        path_length=path_length, marker_estimate_error=marker_err,
        detection_latency_ms=latency, setpoint_count=setpoint_count, seed=seed)
    with open(out / "metrics.json", "w") as f:
        json.dump(_jsonable(report.to_dict()), f, indent=2)
        f.write("\n")
    return report


def _dump_occupancy(buf: OccupancyRingBuffer, path: Path) -> None:
    from .mapping import CellState
    window = buf.window_states()
    idx = np.argwhere(window == CellState.OCCUPIED)
    centers = (idx + buf.offset + 0.5) * buf.resolution
    with open(path, "w") as f:
        f.write("x,y,z\n")
        for c in centers:
            f.write(f"{c[0]:.3f},{c[1]:.3f},{c[2]:.3f}\n")


# ---------------------------------------------------------------------------
# detection sweep


def sweep_detection(resolutions: list[tuple[int, int]] | None = None,
                    distances: np.ndarray | None = None, tilt: float = 0.0,
                    out_csv: str | Path | None = None,
                    base_focal: float = 460.0) -> dict:
    """Render the marker head-on at a range of distances for each resolution,
    run the detector and record the maximum detected distance and per-frame
    latency.  Focal lengths scale with resolution so the field of view stays
    fixed.  Returns {"WxH": {"max_distance", "avg_ms", "max_ms", "rows"}}.
    """
    from .world import CameraIntrinsics, MarkerSpec, VoxelWorld, vec3

    if resolutions is None:
        resolutions = [(640, 480), (1920, 1080)]
    if distances is None:
        distances = np.arange(1.0, 25.0 + 1e-9, 0.5)
    empty = VoxelWorld(boxes=np.zeros((0, 2, 3)), resolution=0.2,
                       bounds=np.array([[-100.0, -100.0, -100.0], [100.0, 100.0, 100.0]]))
    camera = Pose(position=np.zeros(3), yaw=0.0, frame=Frame.WORLD)
    results = {}
    rows_all = []
    for width, height in resolutions:
        fx = base_focal * width / 640.0
        fy = base_focal * height / 480.0
        intr = CameraIntrinsics(width=width, height=height, fx=fx, fy=fy,
                                cx=width / 2.0, cy=height / 2.0)
        label = f"{width}x{height}"
        max_detected = None
        times = []
        rows = []
        for d in distances:
            marker = MarkerSpec(center=vec3(float(d), 0.0, 0.0),
                                normal_yaw=math.pi - tilt,
                                outer_diameter=0.18, inner_diameter=0.09)
            frame = render_marker_view(empty, marker, camera, intr)
            t0 = time.perf_counter()
            det = detect(frame, intr, marker)
            ms = (time.perf_counter() - t0) * 1e3
            times.append(ms)
            z_est = float(det.position_cam[2]) if det else None
            if det is not None:
                max_detected = float(d)
            rows.append({"width": width, "height": height, "distance_m": float(d),
                         "detected": det is not None, "z_est_m": z_est,
                         "latency_ms": ms})
        rows_all.extend(rows)
        results[label] = {"max_distance": max_detected,
                          "avg_ms": float(np.mean(times)),
                          "max_ms": float(np.max(times)),
                          "rows": rows}
    if out_csv is not None:
        with open(out_csv, "w") as f:
            f.write("width,height,distance_m,detected,z_est_m,latency_ms\n")
            for r in rows_all:
                z = "" if r["z_est_m"] is None else f"{r['z_est_m']:.4f}"
                f.write(f"{r['width']},{r['height']},{r['distance_m']:.2f},"
                        f"{int(r['detected'])},{z},{r['latency_ms']:.3f}\n")
    return results
