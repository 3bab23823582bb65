"""Annulus fiducial detector.

Pipeline: luminance threshold -> 4-connected segmentation -> per-region hole
extraction -> moment-based ellipse fit of the filled disc -> area-ratio and
concentricity validation -> range recovery from the projected major axis.

The fit runs on the dark ring united with its enclosed hole: for a uniformly
filled ellipse the covariance eigenvalues give the semi-axes exactly as
a = 2*sqrt(lambda1), b = 2*sqrt(lambda2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage as ndi

from .world import CameraIntrinsics, MarkerSpec

DEFAULT_THRESHOLD = 100
MIN_REGION_AREA = 20
DEFAULT_RATIO_TOL = 0.08
CONCENTRICITY_FRACTION = 0.25
# below this fitted semi-minor axis the hole spans too few pixels for the
# area-ratio check to mean anything; this is what limits detection range
MIN_SEMI_MINOR_PX = 4.65

_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


class DegenerateRegionError(ValueError):
    """Region covariance is rank-deficient (collinear pixels)."""


@dataclass(frozen=True)
class EllipseFit:
    center_px: tuple[float, float]      # (u, v)
    semi_major_px: float
    semi_minor_px: float
    orientation: float


@dataclass(frozen=True)
class Region:
    """A connected dark region; `mask` is local to `bbox` whose top-left pixel
    is `offset` = (x0, y0)."""

    area: int
    centroid_px: tuple[float, float]
    bbox: tuple[int, int, int, int]     # (min_x, min_y, max_x, max_y) inclusive
    mask: np.ndarray
    offset: tuple[int, int]


@dataclass(frozen=True)
class MarkerDetection:
    ellipse: EllipseFit
    position_cam: np.ndarray            # camera frame, meters
    tilt_estimate: float
    area_ratio: float


def segment(image, threshold: int = DEFAULT_THRESHOLD) -> list[Region]:
    """Connected dark regions (pixels < threshold, 4-connectivity), regions of
    area < 20 px discarded, ordered by (min y, min x) of the bounding box."""
    if not (0 < threshold < 255):
        raise ValueError("threshold must lie strictly between 0 and 255")
    mask = image.pixels < threshold
    labels, count = ndi.label(mask, structure=_FOUR_CONN)
    if count == 0:
        return []
    areas = np.bincount(labels.ravel())
    regions = []
    for li, sl in enumerate(ndi.find_objects(labels), start=1):
        if sl is None or areas[li] < MIN_REGION_AREA:
            continue
        local = labels[sl] == li
        y0, x0 = sl[0].start, sl[1].start
        vv, uu = np.nonzero(local)
        cu = float(uu.mean()) + x0 + 0.5
        cv = float(vv.mean()) + y0 + 0.5
        regions.append(Region(
            area=int(areas[li]), centroid_px=(cu, cv),
            bbox=(x0, y0, sl[1].stop - 1, sl[0].stop - 1),
            mask=local, offset=(x0, y0)))
    regions.sort(key=lambda r: (r.bbox[1], r.bbox[0]))
    return regions


def _moments_from_mask(mask: np.ndarray, offset: tuple[int, int]):
    vv, uu = np.nonzero(mask)
    u = uu + (offset[0] + 0.5)
    v = vv + (offset[1] + 0.5)
    mu, mv = float(u.mean()), float(v.mean())
    du, dv = u - mu, v - mv
    cuu = float((du * du).mean())
    cvv = float((dv * dv).mean())
    cuv = float((du * dv).mean())
    return (mu, mv), cuu, cvv, cuv, u.size


def _ellipse_from_moments(center, cuu, cvv, cuv) -> EllipseFit:
    half_trace = 0.5 * (cuu + cvv)
    disc = math.sqrt(max(0.25 * (cuu - cvv) ** 2 + cuv * cuv, 0.0))
    lam1, lam2 = half_trace + disc, half_trace - disc
    if lam2 <= 1e-9:
        raise DegenerateRegionError("region covariance is rank-deficient")
    # pixel-center sampling understates the variance of the underlying
    # uniform region by the per-pixel variance 1/12
    return EllipseFit(center_px=center,
                      semi_major_px=2.0 * math.sqrt(lam1 + 1.0 / 12.0),
                      semi_minor_px=2.0 * math.sqrt(lam2 + 1.0 / 12.0),
                      orientation=0.5 * math.atan2(2.0 * cuv, cuu - cvv))


def fit_ellipse(region: Region, filled_with_hole: bool = True) -> EllipseFit:
    """Moment ellipse of a region; with filled_with_hole the enclosed holes are
    united with the region first (the marker ring becomes a filled disc)."""
    if region.area < MIN_REGION_AREA:
        raise ValueError("region too small to fit")
    mask = ndi.binary_fill_holes(region.mask) if filled_with_hole else region.mask
    center, cuu, cvv, cuv, _ = _moments_from_mask(mask, region.offset)
    return _ellipse_from_moments(center, cuu, cvv, cuv)


def validate_annulus(outer_fit: EllipseFit, hole_area: float,
                     hole_centroid: tuple[float, float], disc_area: float,
                     spec: MarkerSpec, tol: float = DEFAULT_RATIO_TOL) -> tuple[bool, float]:
    """Accept a candidate iff the hole-to-disc area ratio matches the squared
    diameter ratio of the marker and the hole is concentric with the disc."""
    ratio = hole_area / disc_area
    expected = (spec.inner_diameter / spec.outer_diameter) ** 2
    if abs(ratio - expected) > tol:
        return False, ratio
    du = hole_centroid[0] - outer_fit.center_px[0]
    dv = hole_centroid[1] - outer_fit.center_px[1]
    if math.hypot(du, dv) > CONCENTRICITY_FRACTION * outer_fit.semi_minor_px:
        return False, ratio
    return True, ratio


def estimate_position(fit: EllipseFit, intr: CameraIntrinsics,
                      spec: MarkerSpec) -> tuple[np.ndarray, float]:
    """Range from the projected major axis (tilt-invariant to first order),
    bearing from the ellipse center; tilt from the axis ratio."""
    z = intr.fx * (spec.outer_diameter / 2.0) / fit.semi_major_px
    u, v = fit.center_px
    direction = np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])
    tilt = math.acos(min(max(fit.semi_minor_px / fit.semi_major_px, 0.0), 1.0))
    return direction * z, tilt


def detect(image, intr: CameraIntrinsics, spec: MarkerSpec,
           threshold: int = DEFAULT_THRESHOLD,
           ratio_tol: float = DEFAULT_RATIO_TOL) -> MarkerDetection | None:
    """Full pipeline; returns the accepted candidate with the largest disc area
    or None.  Pure function of the image."""
    best = None
    best_area = -1.0
    for region in segment(image, threshold):
        filled = ndi.binary_fill_holes(region.mask)
        hole = filled & ~region.mask
        hole_area = int(hole.sum())
        if hole_area == 0:
            continue
        center, cuu, cvv, cuv, disc_area = _moments_from_mask(filled, region.offset)
        try:
            fit = _ellipse_from_moments(center, cuu, cvv, cuv)
        except DegenerateRegionError:
            continue
        if fit.semi_minor_px < MIN_SEMI_MINOR_PX:
            continue
        hole_center, *_ = _moments_from_mask(hole, region.offset)
        ok, ratio = validate_annulus(fit, hole_area, hole_center, float(disc_area),
                                     spec, ratio_tol)
        if not ok or disc_area <= best_area:
            continue
        position_cam, tilt = estimate_position(fit, intr, spec)
        best_area = disc_area
        best = MarkerDetection(ellipse=fit, position_cam=position_cam,
                               tilt_estimate=tilt, area_ratio=ratio)
    return best
