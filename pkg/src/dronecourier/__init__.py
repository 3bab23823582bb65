"""Deterministic headless simulator for urban balcony drone delivery."""

from .autopilot import ControlLimits, DroneState
from .mapping import (CellState, DistanceField, OccupancyRingBuffer,
                      compute_distance_field)
from .marker_tracker import (EllipseFit, MarkerDetection, detect, estimate_position,
                             fit_ellipse, segment, validate_annulus)
from .mission import (Mission, MissionInputs, MissionState, MarkerFilter,
                      fuse_state)
from .planner import (InfeasibleTrajectoryError, PlannerConfig, Setpoint,
                      SplineSpanError, UniformBSpline, next_setpoint, plan_initial,
                      reoptimize)
from .sensors import (DepthImage, GpsFix, GpsSensor, GrayImage, OdomEstimate,
                      render_depth, render_marker_view, vo_step)
from .sim import MetricsReport, run, sweep_detection
from .world import (CameraIntrinsics, Frame, MarkerSpec, NoiseParams, Pose,
                    Scenario, ScenarioError, VoxelWorld, is_occupied,
                    load_scenario, ray_intersect, vec3)

__version__ = "0.1.0"
