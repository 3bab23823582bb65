"""Ground-truth scene: axis-aligned box obstacles, scenario schema, exact ray queries.

Frames are right-handed East-North-Up with altitude on z.  Everything in this
module is immutable after construction and consumes no randomness, so the same
primitives back both the simulated sensors and the verification oracles.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

TWO_PI = 2.0 * math.pi


class Frame(Enum):
    WORLD = "WORLD"
    ODOM = "ODOM"
    BODY = "BODY"
    CAM_FRONT = "CAM_FRONT"


class ScenarioError(ValueError):
    """Scenario file failed to parse or violates a documented invariant."""


def vec3(x: float, y: float, z: float) -> np.ndarray:
    return np.array([float(x), float(y), float(z)])


def wrap_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return (a + math.pi) % TWO_PI - math.pi


@dataclass(frozen=True)
class Pose:
    """Position plus yaw; roll and pitch are fixed at zero (yaw-only drone)."""

    position: np.ndarray
    yaw: float
    frame: Frame = Frame.WORLD


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    def validate(self, label: str = "camera") -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ScenarioError(f"{label}: focal lengths must be positive")
        if not (0 < self.cx < self.width) or not (0 < self.cy < self.height):
            raise ScenarioError(f"{label}: principal point must lie inside the image")


@dataclass(frozen=True)
class VoxelWorld:
    """Static scene as axis-aligned boxes; `resolution` only matters to oracles
    that rasterize the scene, the analytic queries below are exact."""

    boxes: np.ndarray      # (K, 2, 3) min/max corners, meters; K may be 0
    resolution: float
    bounds: np.ndarray     # (2, 3) min/max corner of the playable volume


@dataclass(frozen=True)
class MarkerSpec:
    """Annulus fiducial on a vertical wall, printed on an A4-sized sheet."""

    center: np.ndarray
    normal_yaw: float      # outward normal direction of the mounting wall
    outer_diameter: float
    inner_diameter: float

    def normal(self) -> np.ndarray:
        return vec3(math.cos(self.normal_yaw), math.sin(self.normal_yaw), 0.0)

    def tangent(self) -> np.ndarray:
        # horizontal in-plane axis: z-hat cross normal
        return vec3(-math.sin(self.normal_yaw), math.cos(self.normal_yaw), 0.0)


@dataclass(frozen=True)
class NoiseParams:
    gps_sigma_open: float = 0.4
    gps_bias_urban_max: float = 5.0
    vo_drift_per_meter: float = 0.01
    depth_noise_sigma: float = 0.01


@dataclass(frozen=True)
class ScenarioCameras:
    front: CameraIntrinsics
    front_depth: CameraIntrinsics


@dataclass(frozen=True)
class Scenario:
    world: VoxelWorld
    marker: MarkerSpec
    home: np.ndarray
    cruise_altitude: float
    rooftop_height: float
    channel_top: np.ndarray
    channel_bottom_altitude: float
    drop_offset: float
    drone_radius: float
    depth_max_range: float
    noise: NoiseParams
    cameras: ScenarioCameras
    seed: int


# ---------------------------------------------------------------------------
# geometric queries


def is_occupied(world: VoxelWorld, p: np.ndarray) -> bool:
    """True iff p lies inside any box; the boundary counts as inside."""
    if world.boxes.shape[0] == 0:
        return False
    inside = np.all(world.boxes[:, 0] <= p, axis=1) & np.all(p <= world.boxes[:, 1], axis=1)
    return bool(inside.any())


def is_occupied_batch(world: VoxelWorld, pts: np.ndarray) -> np.ndarray:
    """Vectorized is_occupied over an (N, 3) array of points."""
    n = pts.shape[0]
    out = np.zeros(n, dtype=bool)
    for box in world.boxes:
        out |= np.all(pts >= box[0], axis=1) & np.all(pts <= box[1], axis=1)
    return out


def ray_intersect(world: VoxelWorld, origin: np.ndarray, direction: np.ndarray,
                  max_range: float) -> float | None:
    """Smallest t in (0, max_range] where origin + t*direction enters a box.

    Exact slab test per box.  `direction` must be unit length.  Returns None
    when nothing is hit; returns 0.0 when the origin already sits inside a box.
    """
    t = raycast_batch(world, origin, direction[None, :])[0]
    if not np.isfinite(t) or t > max_range:
        return None
    return float(t)


def raycast_batch(world: VoxelWorld, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Slab-test a bundle of unit rays from one origin against every box.

    Returns an (N,) array of hit distances, +inf where a ray misses all boxes.
    """
    n = dirs.shape[0]
    t_best = np.full(n, np.inf)
    if world.boxes.shape[0] == 0:
        return t_best
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
    for box in world.boxes:
        t0 = (box[0] - origin) * inv
        t1 = (box[1] - origin) * inv
        # 0/0 happens when the origin lies exactly on a face of an
        # axis-parallel slab; treat that as being inside the slab.
        np.nan_to_num(t0, copy=False, nan=0.0, posinf=np.inf, neginf=-np.inf)
        np.nan_to_num(t1, copy=False, nan=0.0, posinf=np.inf, neginf=-np.inf)
        t_near = np.minimum(t0, t1).max(axis=1)
        t_far = np.maximum(t0, t1).min(axis=1)
        hit = (t_near <= t_far) & (t_far > 0.0)
        t_entry = np.where(t_near > 0.0, t_near, 0.0)
        closer = hit & (t_entry < t_best)
        t_best[closer] = t_entry[closer]
    return t_best


def clearance_to_boxes(world: VoxelWorld, p: np.ndarray) -> float:
    """Euclidean distance from a point to the nearest box surface (inf if no boxes).

    Zero when the point is inside or on a box.
    """
    if world.boxes.shape[0] == 0:
        return math.inf
    lo = world.boxes[:, 0] - p
    hi = p - world.boxes[:, 1]
    d = np.maximum(np.maximum(lo, hi), 0.0)
    return float(np.sqrt((d * d).sum(axis=1)).min())


def _channel_obstruction(world: VoxelWorld, channel_top: np.ndarray,
                         channel_bottom_altitude: float, radius: float) -> int | None:
    """Index of the first box intersecting the inflated descent column, or None.

    The column is the vertical segment under channel_top inflated by the drone
    radius; the test against each box is exact (cylinder vs AABB in xy).
    """
    cx, cy = float(channel_top[0]), float(channel_top[1])
    z_lo, z_hi = float(channel_bottom_altitude), float(channel_top[2])
    for i, box in enumerate(world.boxes):
        if box[1, 2] < z_lo or box[0, 2] > z_hi:
            continue
        dx = max(box[0, 0] - cx, 0.0, cx - box[1, 0])
        dy = max(box[0, 1] - cy, 0.0, cy - box[1, 1])
        if math.hypot(dx, dy) <= radius:
            return i
    return None


# ---------------------------------------------------------------------------
# scenario loading


def _field(obj: dict, key: str, ctx: str):
    if key not in obj:
        raise ScenarioError(f"missing field '{ctx}.{key}'" if ctx else f"missing field '{key}'")
    return obj[key]


def _vec(obj: dict, key: str, ctx: str) -> np.ndarray:
    raw = _field(obj, key, ctx)
    if not isinstance(raw, (list, tuple)) or len(raw) != 3:
        raise ScenarioError(f"field '{ctx}.{key}' must be a 3-element array" if ctx
                            else f"field '{key}' must be a 3-element array")
    v = np.asarray(raw, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ScenarioError(f"field '{key}' has non-finite components")
    return v


def _intrinsics(obj: dict, label: str) -> CameraIntrinsics:
    intr = CameraIntrinsics(
        width=int(_field(obj, "width", label)), height=int(_field(obj, "height", label)),
        fx=float(_field(obj, "fx", label)), fy=float(_field(obj, "fy", label)),
        cx=float(_field(obj, "cx", label)), cy=float(_field(obj, "cy", label)))
    intr.validate(label)
    return intr


def load_scenario(path: str | Path) -> Scenario:
    """Parse and validate a scenario JSON file.

    Raises ScenarioError with field context on parse problems and with the name
    of the violated invariant on semantic problems.  Loading is deterministic
    and idempotent.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ScenarioError(f"cannot read scenario file {path}: {e}") from e
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e

    wraw = _field(raw, "world", "")
    resolution = float(_field(wraw, "resolution", "world"))
    if resolution <= 0:
        raise ScenarioError("invariant violated: world.resolution must be > 0")
    bounds = np.asarray(_field(wraw, "bounds", "world"), dtype=float)
    if bounds.shape != (2, 3):
        raise ScenarioError("field 'world.bounds' must be [[minx,miny,minz],[maxx,maxy,maxz]]")
    boxes_raw = _field(wraw, "boxes", "world")
    boxes = np.asarray(boxes_raw, dtype=float).reshape(-1, 2, 3) if boxes_raw else np.zeros((0, 2, 3))
    for i, box in enumerate(boxes):
        if not np.all(box[0] < box[1]):
            raise ScenarioError(f"invariant violated: world.boxes[{i}] min corner must be < max corner")
        if np.any(box[0] < bounds[0]) or np.any(box[1] > bounds[1]):
            raise ScenarioError(f"invariant violated: world.boxes[{i}] lies outside world.bounds")
    world = VoxelWorld(boxes=boxes, resolution=resolution, bounds=bounds)

    mraw = _field(raw, "marker", "")
    marker = MarkerSpec(
        center=_vec(mraw, "center", "marker"),
        normal_yaw=wrap_angle(float(_field(mraw, "normal_yaw", "marker"))),
        outer_diameter=float(_field(mraw, "outer_diameter", "marker")),
        inner_diameter=float(_field(mraw, "inner_diameter", "marker")))
    if not (0.0 < marker.inner_diameter < marker.outer_diameter):
        raise ScenarioError("invariant violated: marker requires 0 < inner_diameter < outer_diameter")
    if marker.outer_diameter > 0.19:
        raise ScenarioError("invariant violated: marker.outer_diameter must fit an A4/letter sheet (<= 0.19 m)")

    nraw = raw.get("noise", {})
    noise = NoiseParams(
        gps_sigma_open=float(nraw.get("gps_sigma_open", 0.4)),
        gps_bias_urban_max=float(nraw.get("gps_bias_urban_max", 5.0)),
        vo_drift_per_meter=float(nraw.get("vo_drift_per_meter", 0.01)),
        depth_noise_sigma=float(nraw.get("depth_noise_sigma", 0.01)))
    if min(noise.gps_sigma_open, noise.gps_bias_urban_max,
           noise.vo_drift_per_meter, noise.depth_noise_sigma) < 0:
        raise ScenarioError("invariant violated: noise parameters must be >= 0")

    craw = _field(raw, "cameras", "")
    cameras = ScenarioCameras(front=_intrinsics(_field(craw, "front", "cameras"), "cameras.front"),
                              front_depth=_intrinsics(_field(craw, "front_depth", "cameras"),
                                                      "cameras.front_depth"))

    scenario = Scenario(
        world=world, marker=marker,
        home=_vec(raw, "home", ""),
        cruise_altitude=float(_field(raw, "cruise_altitude", "")),
        rooftop_height=float(_field(raw, "rooftop_height", "")),
        channel_top=_vec(raw, "channel_top", ""),
        channel_bottom_altitude=float(_field(raw, "channel_bottom_altitude", "")),
        drop_offset=float(_field(raw, "drop_offset", "")),
        drone_radius=float(raw.get("drone_radius", 0.4)),
        depth_max_range=float(raw.get("depth_max_range", 10.0)),
        noise=noise, cameras=cameras,
        seed=int(raw.get("seed", 0)))

    if scenario.channel_top[2] <= scenario.rooftop_height:
        raise ScenarioError("invariant violated: channel_top altitude must exceed rooftop_height")
    if scenario.channel_bottom_altitude < 0:
        raise ScenarioError("invariant violated: channel_bottom_altitude must be >= 0")
    if scenario.channel_bottom_altitude >= scenario.channel_top[2]:
        raise ScenarioError("invariant violated: channel_bottom_altitude must be below channel_top")
    if scenario.cruise_altitude <= scenario.rooftop_height:
        raise ScenarioError("invariant violated: cruise_altitude must exceed rooftop_height")
    if scenario.drone_radius <= 0:
        raise ScenarioError("invariant violated: drone_radius must be > 0")
    bad = _channel_obstruction(world, scenario.channel_top, scenario.channel_bottom_altitude,
                               scenario.drone_radius)
    if bad is not None:
        raise ScenarioError(f"invariant violated: descent channel obstructed by world.boxes[{bad}]")
    return scenario
