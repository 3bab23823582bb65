"""Simulated sensor suite: pinhole depth camera, grayscale marker camera,
altitude-gated GPS and a drifting visual-odometry estimate.

Camera convention: +z optical axis forward, +x right, +y down.  The front
camera sits at the body origin looking along body +x; the drone is yaw-only,
so a camera pose is fully described by a world position and a yaw.

Depth images store z-depth (distance along the optical axis), not Euclidean
ray length; no-return pixels hold +inf.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .world import (CameraIntrinsics, MarkerSpec, NoiseParams, Pose, VoxelWorld,
                    raycast_batch, vec3, wrap_angle)

# A4 portrait sheet the marker is printed on; white inside, evaluated in the
# marker plane around the marker center.
SHEET_HALF_WIDTH = 0.105
SHEET_HALF_HEIGHT = 0.1485

LUM_MARKER_BLACK = 0
LUM_WALL = 128
LUM_SKY = 200
LUM_SHEET_WHITE = 255


@dataclass(frozen=True)
class DepthImage:
    width: int
    height: int
    depths: np.ndarray            # (height, width) z-depth meters, +inf = no return
    intrinsics: CameraIntrinsics
    pose_at_capture: Pose
    max_range: float


@dataclass(frozen=True)
class GrayImage:
    width: int
    height: int
    pixels: np.ndarray            # (height, width) uint8 luminance


@dataclass(frozen=True)
class GpsFix:
    position: np.ndarray
    degraded: bool


@dataclass(frozen=True)
class OdomEstimate:
    position: np.ndarray          # ODOM frame
    yaw: float
    accumulated_drift: np.ndarray  # estimate minus truth, test-visible only


def camera_rotation(yaw: float) -> np.ndarray:
    """Rotation mapping camera coordinates to world for a front camera on a
    yaw-only body (optical axis along body +x, image x right, image y down)."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([
        [s, 0.0, c],
        [-c, 0.0, s],
        [0.0, -1.0, 0.0],
    ])


@functools.lru_cache(maxsize=8)
def _pixel_dirs(intr: CameraIntrinsics) -> np.ndarray:
    """Camera-frame ray directions through pixel centers, z component 1.

    Shaped (height*width, 3), row-major.
    """
    u = (np.arange(intr.width) + 0.5 - intr.cx) / intr.fx
    v = (np.arange(intr.height) + 0.5 - intr.cy) / intr.fy
    uu, vv = np.meshgrid(u, v)
    return np.stack([uu.ravel(), vv.ravel(), np.ones(uu.size)], axis=1)


@functools.lru_cache(maxsize=8)
def _pixel_norms(intr: CameraIntrinsics) -> np.ndarray:
    # yaw rotation preserves norms, so these are valid for any camera pose
    return np.linalg.norm(_pixel_dirs(intr), axis=1)


def render_depth(world: VoxelWorld, camera_pose: Pose, intr: CameraIntrinsics,
                 max_range: float, noise_sigma: float = 0.0,
                 rng: np.random.Generator | None = None) -> DepthImage:
    """Cast one ray per pixel center and store the z-depth of the first box hit.

    Gaussian noise of the given sigma is added to returned depths; pixels whose
    Euclidean hit distance exceeds max_range read +inf.
    """
    dirs_cam = _pixel_dirs(intr)
    dirs_w = dirs_cam @ camera_rotation(camera_pose.yaw).T
    norms = _pixel_norms(intr)
    t = raycast_batch(world, camera_pose.position, dirs_w / norms[:, None])
    hit = t <= max_range
    # z-depth: project the Euclidean distance onto the optical axis
    z = np.where(hit, t / norms, np.inf)
    if noise_sigma > 0.0:
        if rng is None:
            raise ValueError("noise_sigma > 0 requires an rng")
        z = np.where(hit, z + rng.normal(0.0, noise_sigma, z.shape), z)
        z = np.where(hit, np.clip(z, 1e-6, max_range), z)
    return DepthImage(width=intr.width, height=intr.height,
                      depths=z.reshape(intr.height, intr.width),
                      intrinsics=intr, pose_at_capture=camera_pose, max_range=max_range)


def render_marker_view(world: VoxelWorld, marker: MarkerSpec, camera_pose: Pose,
                       intr: CameraIntrinsics) -> GrayImage:
    """Grayscale render of the scene with the annulus marker painted on its wall.

    Rays hitting the marker sheet (and not occluded by geometry) shade white
    with the black ring where the in-plane radius falls between the inner and
    outer marker radii; other geometry is mid-gray, no hit is sky.
    """
    dirs_cam = _pixel_dirs(intr)
    dirs_w = dirs_cam @ camera_rotation(camera_pose.yaw).T
    lum = np.full(dirs_cam.shape[0], LUM_SKY, dtype=np.uint8)

    n = marker.normal()
    denom = dirs_w @ n
    to_plane = float((marker.center - camera_pose.position) @ n)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_plane = to_plane / denom   # in unnormalized-direction units
    # front side only and in front of the camera
    visible = (denom < -1e-12) & (t_plane > 1e-9)
    if world.boxes.shape[0] > 0:
        norms = _pixel_norms(intr)
        t_box = raycast_batch(world, camera_pose.position, dirs_w / norms[:, None])
        lum[np.isfinite(t_box)] = LUM_WALL
        visible &= t_plane * norms <= t_box + 1e-6   # not occluded by geometry
    if visible.any():
        hits = camera_pose.position + dirs_w[visible] * t_plane[visible, None]
        rel = hits - marker.center
        u = rel @ marker.tangent()
        v = rel[:, 2]
        on_sheet = (np.abs(u) <= SHEET_HALF_WIDTH) & (np.abs(v) <= SHEET_HALF_HEIGHT)
        r = np.hypot(u, v)
        ring = (r >= marker.inner_diameter / 2.0) & (r <= marker.outer_diameter / 2.0)
        shade = np.where(ring, LUM_MARKER_BLACK, LUM_SHEET_WHITE).astype(np.uint8)
        idx = np.flatnonzero(visible)[on_sheet]
        lum[idx] = shade[on_sheet]
    return GrayImage(width=intr.width, height=intr.height,
                     pixels=lum.reshape(intr.height, intr.width))


def marker_in_frustum(marker: MarkerSpec, camera_pose: Pose, intr: CameraIntrinsics,
                      margin_px: float = 8.0) -> bool:
    """Cheap conservative test: could any part of the marker sheet project into
    the image?  Used to skip full renders on frames that cannot contain the
    marker (only the sheet ever produces below-threshold pixels)."""
    if float((camera_pose.position - marker.center) @ marker.normal()) <= 0.0:
        return False  # camera behind the wall plane
    tangent = marker.tangent()
    corners = [marker.center + su * SHEET_HALF_WIDTH * tangent + vec3(0, 0, sv * SHEET_HALF_HEIGHT)
               for su in (-1.0, 1.0) for sv in (-1.0, 1.0)]
    cam = (np.asarray(corners) - camera_pose.position) @ camera_rotation(camera_pose.yaw)
    front = cam[:, 2] > 1e-9
    if not front.any():
        return False
    if not front.all():
        return True  # sheet straddles the image plane; be conservative
    u = intr.cx + intr.fx * cam[:, 0] / cam[:, 2]
    v = intr.cy + intr.fy * cam[:, 1] / cam[:, 2]
    return bool(u.max() >= -margin_px and u.min() <= intr.width + margin_px
                and v.max() >= -margin_px and v.min() <= intr.height + margin_px)


class GpsSensor:
    """GPS fix generator with the below-rooftop multipath regime.

    Above the rooftop the fix is the true position plus isotropic Gaussian
    noise whose 3D RMS magnitude is gps_sigma_open.  Below, a systematic bias
    vector of magnitude uniform in [1, gps_bias_urban_max] is added on top and
    the fix is flagged degraded; the bias is resampled once per descent.
    """

    def __init__(self, noise: NoiseParams, rooftop_height: float, rng: np.random.Generator):
        self.noise = noise
        self.rooftop_height = rooftop_height
        self.rng = rng
        self._bias = np.zeros(3)
        self._below = False

    def measure(self, true_pos: np.ndarray) -> GpsFix:
        below = true_pos[2] <= self.rooftop_height
        if below and not self._below:
            self._bias = self._sample_bias()
        self._below = below
        sigma_axis = self.noise.gps_sigma_open / math.sqrt(3.0)
        jitter = self.rng.normal(0.0, sigma_axis, 3) if sigma_axis > 0 else np.zeros(3)
        if below:
            return GpsFix(position=true_pos + self._bias + jitter, degraded=True)
        return GpsFix(position=true_pos + jitter, degraded=False)

    def _sample_bias(self) -> np.ndarray:
        hi = self.noise.gps_bias_urban_max
        if hi <= 0.0:
            return np.zeros(3)
        direction = self.rng.normal(0.0, 1.0, 3)
        norm = np.linalg.norm(direction)
        if norm < 1e-12:
            direction, norm = np.array([1.0, 0.0, 0.0]), 1.0
        magnitude = self.rng.uniform(min(1.0, hi), hi)
        return direction / norm * magnitude


def gps_measure(sensor: GpsSensor, true_pos: np.ndarray) -> GpsFix:
    return sensor.measure(true_pos)


def vo_step(prev: OdomEstimate, true_delta: np.ndarray, true_yaw_delta: float,
            noise: NoiseParams, rng: np.random.Generator) -> OdomEstimate:
    """Advance the odometry estimate by the true motion plus a random-walk
    increment with per-axis sigma vo_drift_per_meter * |true_delta|.  Yaw is
    drift-free; the drift never grows while the drone is stationary.
    """
    dist = float(np.linalg.norm(true_delta))
    sigma = noise.vo_drift_per_meter * dist
    inc = rng.normal(0.0, sigma, 3) if sigma > 0.0 else np.zeros(3)
    return OdomEstimate(position=prev.position + true_delta + inc,
                        yaw=wrap_angle(prev.yaw + true_yaw_delta),
                        accumulated_drift=prev.accumulated_drift + inc)


# ---------------------------------------------------------------------------
# debug image dumps


def write_pgm_gray(path: str | Path, image: GrayImage) -> None:
    with open(path, "wb") as f:
        f.write(f"P5\n{image.width} {image.height}\n255\n".encode())
        f.write(np.ascontiguousarray(image.pixels, dtype=np.uint8).tobytes())


def write_pgm_depth16(path: str | Path, image: DepthImage) -> None:
    """Depth in millimeters as big-endian 16-bit PGM; no-return pixels are 0."""
    mm = np.where(np.isfinite(image.depths), image.depths * 1000.0, 0.0)
    data = np.clip(mm, 0, 65535).astype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{image.width} {image.height}\n65535\n".encode())
        f.write(data.tobytes())
