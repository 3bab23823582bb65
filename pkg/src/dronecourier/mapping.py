"""Drone-centered occupancy grid in a 3D circular buffer plus a clamped
Euclidean distance field.

The buffer stores one byte per cell in a cube of n^3 cells (n a power of two).
A cell with global integer coordinates g lives at storage slot g & (n-1) per
axis, so translating the volume never moves retained data: move_volume only
shifts the window offset and resets the slices that enter the window to
UNKNOWN.  The same offset therefore always addresses the same content no
matter how it was reached.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numba
import numpy as np
from scipy import ndimage as ndi

from .sensors import DepthImage, camera_rotation
from .world import Pose


class CellState(IntEnum):
    UNKNOWN = 0
    FREE = 1
    OCCUPIED = 2


@numba.njit(cache=True)
def _dda_collect(origin, dirs, t_ends, res, out):
    """Amanatides-Woo integer traversal for a bundle of rays from one origin.

    Collects every cell entered from t=0 up to (excluding crossings at or
    beyond) each ray's t_end into `out`; returns the number of cells written.
    Directions need not be normalized as long as t_ends are measured in the
    same parameterization.
    """
    count = 0
    for r in range(dirs.shape[0]):
        t_end = t_ends[r]
        if t_end <= 0.0 or count >= out.shape[0]:
            continue
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        cx = int(math.floor(origin[0] / res))
        cy = int(math.floor(origin[1] / res))
        cz = int(math.floor(origin[2] / res))
        out[count, 0], out[count, 1], out[count, 2] = cx, cy, cz
        count += 1
        sx = 1 if dx > 0.0 else -1
        sy = 1 if dy > 0.0 else -1
        sz = 1 if dz > 0.0 else -1
        big = 1e30
        tmx = ((cx + (1 if sx > 0 else 0)) * res - origin[0]) / dx if dx != 0.0 else big
        tmy = ((cy + (1 if sy > 0 else 0)) * res - origin[1]) / dy if dy != 0.0 else big
        tmz = ((cz + (1 if sz > 0 else 0)) * res - origin[2]) / dz if dz != 0.0 else big
        tdx = res / abs(dx) if dx != 0.0 else big
        tdy = res / abs(dy) if dy != 0.0 else big
        tdz = res / abs(dz) if dz != 0.0 else big
        while count < out.shape[0]:
            if tmx <= tmy and tmx <= tmz:
                if tmx >= t_end:
                    break
                cx += sx
                tmx += tdx
            elif tmy <= tmz:
                if tmy >= t_end:
                    break
                cy += sy
                tmy += tdy
            else:
                if tmz >= t_end:
                    break
                cz += sz
                tmz += tdz
            out[count, 0], out[count, 1], out[count, 2] = cx, cy, cz
            count += 1
    return count


def traverse_cells(origin: np.ndarray, dirs: np.ndarray, t_ends: np.ndarray,
                   resolution: float) -> np.ndarray:
    """Global integer cells crossed by each ray before its t_end (see
    _dda_collect); rays share the origin.  Returns an (M, 3) int64 array with
    duplicates across rays preserved."""
    budget = int(np.ceil(np.maximum(t_ends, 0.0) / resolution + 4.0).sum() * 3)
    out = np.empty((max(budget, 8), 3), dtype=np.int64)
    n = _dda_collect(np.ascontiguousarray(origin, dtype=np.float64),
                     np.ascontiguousarray(dirs, dtype=np.float64),
                     np.ascontiguousarray(t_ends, dtype=np.float64),
                     float(resolution), out)
    return out[:n]


def _exit_distance(origin: np.ndarray, dirs: np.ndarray, lo: np.ndarray,
                   hi: np.ndarray) -> np.ndarray:
    """Distance at which each ray leaves the axis-aligned volume [lo, hi]."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (lo - origin) / dirs
        t1 = (hi - origin) / dirs
    np.nan_to_num(t0, copy=False, nan=-np.inf, posinf=np.inf, neginf=-np.inf)
    np.nan_to_num(t1, copy=False, nan=np.inf, posinf=np.inf, neginf=-np.inf)
    return np.maximum(t0, t1).min(axis=1)


class OccupancyRingBuffer:
    """Single-writer occupancy cube that translates with the drone."""

    def __init__(self, n: int, resolution: float, center: np.ndarray):
        if n <= 0 or (n & (n - 1)) != 0:
            raise ValueError("n must be a power of two")
        if resolution <= 0:
            raise ValueError("resolution must be positive")
        self.n = n
        self.mask = n - 1
        self.resolution = float(resolution)
        self.cells = np.full((n, n, n), CellState.UNKNOWN, dtype=np.uint8)
        self.offset = self._center_offset(center)

    def _center_offset(self, center: np.ndarray) -> np.ndarray:
        return np.floor(np.asarray(center, dtype=float) / self.resolution).astype(np.int64) - self.n // 2

    # -- addressing ---------------------------------------------------------

    def world_to_cell(self, p: np.ndarray) -> np.ndarray:
        return np.floor(np.asarray(p, dtype=float) / self.resolution).astype(np.int64)

    def contains_cells(self, g: np.ndarray) -> np.ndarray:
        rel = g - self.offset
        return np.all((rel >= 0) & (rel < self.n), axis=-1)

    def min_corner_world(self) -> np.ndarray:
        return self.offset.astype(float) * self.resolution

    # -- operations ----------------------------------------------------------

    def move_volume(self, new_center: np.ndarray) -> None:
        """Re-center the volume on new_center to cell granularity.  Retained
        cells keep their state; slices entering the window reset to UNKNOWN."""
        new_offset = self._center_offset(new_center)
        delta = new_offset - self.offset
        if np.all(delta == 0):
            return
        if np.any(np.abs(delta) >= self.n):
            self.cells[:] = CellState.UNKNOWN
            self.offset = new_offset
            return
        for axis in range(3):
            d = int(delta[axis])
            if d == 0:
                continue
            if d > 0:
                entering = np.arange(self.offset[axis] + self.n, new_offset[axis] + self.n)
            else:
                entering = np.arange(new_offset[axis], self.offset[axis])
            slots = entering & self.mask
            if axis == 0:
                self.cells[slots, :, :] = CellState.UNKNOWN
            elif axis == 1:
                self.cells[:, slots, :] = CellState.UNKNOWN
            else:
                self.cells[:, :, slots] = CellState.UNKNOWN
        self.offset = new_offset

    def occupancy_at(self, p: np.ndarray) -> CellState:
        """State of the cell containing p; UNKNOWN outside the volume."""
        g = self.world_to_cell(p)
        if not bool(self.contains_cells(g)):
            return CellState.UNKNOWN
        s = g & self.mask
        return CellState(self.cells[s[0], s[1], s[2]])

    def states_at(self, pts: np.ndarray) -> np.ndarray:
        """Vectorized occupancy_at over (N, 3) points."""
        g = np.floor(pts / self.resolution).astype(np.int64)
        inside = self.contains_cells(g)
        out = np.full(pts.shape[0], CellState.UNKNOWN, dtype=np.uint8)
        if inside.any():
            s = g[inside] & self.mask
            out[inside] = self.cells[s[:, 0], s[:, 1], s[:, 2]]
        return out

    def insert_depth(self, camera_pose: Pose, depth: DepthImage,
                     max_insert_range: float) -> None:
        """Integrate one depth image taken at the given (estimated) pose.

        Finite pixels mark their reprojected endpoint cell OCCUPIED and carve
        the cells crossed on the way FREE; sentinel pixels carve FREE out to
        max_insert_range.  FREE never overwrites cells marked OCCUPIED by this
        same call, and nothing is written outside the volume.
        """
        intr = depth.intrinsics
        u = (np.arange(intr.width) + 0.5 - intr.cx) / intr.fx
        v = (np.arange(intr.height) + 0.5 - intr.cy) / intr.fy
        uu, vv = np.meshgrid(u, v)
        dirs_cam = np.stack([uu.ravel(), vv.ravel(), np.ones(uu.size)], axis=1)
        dirs_w = dirs_cam @ camera_rotation(camera_pose.yaw).T
        origin = camera_pose.position.astype(float)

        z = depth.depths.ravel()
        finite = np.isfinite(z)
        # with z-depth, the endpoint along the pixel ray is origin + dir_w * z
        # because dir_cam has unit optical-axis component
        occ_slots = None
        if finite.any():
            endpoints = origin + dirs_w[finite] * z[finite][:, None]
            g = np.floor(endpoints / self.resolution).astype(np.int64)
            inside = self.contains_cells(g)
            if inside.any():
                s = g[inside] & self.mask
                self.cells[s[:, 0], s[:, 1], s[:, 2]] = CellState.OCCUPIED
                occ_slots = s

        occ_this_frame = np.zeros_like(self.cells, dtype=bool)
        if occ_slots is not None:
            occ_this_frame[occ_slots[:, 0], occ_slots[:, 1], occ_slots[:, 2]] = True

        # parameterize each ray by z-depth; clip at the volume boundary
        lo = self.min_corner_world()
        hi = lo + self.n * self.resolution
        t_exit = _exit_distance(origin, dirs_w, lo, hi)
        norms = np.linalg.norm(dirs_w, axis=1)
        t_end = np.where(finite, z, max_insert_range / norms)
        t_end = np.minimum(t_end, np.maximum(t_exit, 0.0))

        visited = traverse_cells(origin, dirs_w, t_end, self.resolution)
        if visited.shape[0] == 0:
            return
        inside = self.contains_cells(visited)
        s = visited[inside] & self.mask
        keep = ~occ_this_frame[s[:, 0], s[:, 1], s[:, 2]]
        s = s[keep]
        self.cells[s[:, 0], s[:, 1], s[:, 2]] = CellState.FREE

    def window_states(self) -> np.ndarray:
        """Cell states in window order: index w corresponds to global cell
        offset + w."""
        idx = [(np.arange(self.n) + self.offset[a]) & self.mask for a in range(3)]
        return self.cells[np.ix_(idx[0], idx[1], idx[2])]


@dataclass(frozen=True)
class DistanceField:
    """Clamped distance-to-nearest-occupied-cell-center, window order."""

    values: np.ndarray        # (n, n, n) meters
    offset: np.ndarray        # window min corner, cell coordinates
    resolution: float
    d_max: float

    def at(self, p: np.ndarray) -> float:
        return float(self.sample_trilinear(np.asarray(p, dtype=float)[None, :])[0])

    def sample_trilinear(self, pts: np.ndarray) -> np.ndarray:
        """Trilinear interpolation between cell centers; queries are clamped to
        the volume, so outside points read the nearest border value."""
        n = self.values.shape[0]
        local = pts / self.resolution - 0.5 - self.offset
        local = np.clip(local, 0.0, n - 1.000001)
        i0 = np.floor(local).astype(np.int64)
        f = local - i0
        i1 = np.minimum(i0 + 1, n - 1)
        v = self.values
        c000 = v[i0[:, 0], i0[:, 1], i0[:, 2]]
        c100 = v[i1[:, 0], i0[:, 1], i0[:, 2]]
        c010 = v[i0[:, 0], i1[:, 1], i0[:, 2]]
        c110 = v[i1[:, 0], i1[:, 1], i0[:, 2]]
        c001 = v[i0[:, 0], i0[:, 1], i1[:, 2]]
        c101 = v[i1[:, 0], i0[:, 1], i1[:, 2]]
        c011 = v[i0[:, 0], i1[:, 1], i1[:, 2]]
        c111 = v[i1[:, 0], i1[:, 1], i1[:, 2]]
        fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
        c00 = c000 * (1 - fx) + c100 * fx
        c10 = c010 * (1 - fx) + c110 * fx
        c01 = c001 * (1 - fx) + c101 * fx
        c11 = c011 * (1 - fx) + c111 * fx
        c0 = c00 * (1 - fy) + c10 * fy
        c1 = c01 * (1 - fy) + c11 * fy
        return c0 * (1 - fz) + c1 * fz

    def clearance(self, pts: np.ndarray) -> np.ndarray:
        """Conservative obstacle distance: the trilinear sample minus half a
        cell diagonal, floored at zero, so that a positive value lower-bounds
        the distance to the occupied region itself rather than to cell
        centers."""
        inflation = 0.5 * self.resolution * math.sqrt(3.0)
        return np.maximum(self.sample_trilinear(pts) - inflation, 0.0)


def compute_distance_field(buf: OccupancyRingBuffer, d_max: float) -> DistanceField:
    """Euclidean distance from every cell center to the nearest OCCUPIED cell
    center, clamped to d_max; UNKNOWN counts as free space."""
    if d_max <= 0:
        raise ValueError("d_max must be positive")
    window = buf.window_states()
    occupied = window == CellState.OCCUPIED
    if not occupied.any():
        values = np.full(window.shape, float(d_max))
    else:
        # distance in cell units is exact (integer squared sums under sqrt)
        values = ndi.distance_transform_edt(~occupied) * buf.resolution
        np.minimum(values, d_max, out=values)
    return DistanceField(values=values, offset=buf.offset.copy(),
                         resolution=buf.resolution, d_max=float(d_max))
