"""Core state estimation: map structures, visual-inertial residuals,
Gauss-Newton bundle adjustment with landmark elimination, tracking and
initialization."""

from .slam_map import CovisibilityGraph, KeyframeState, MapPoint, SlamMap
from .residuals import (
    batch_visual_terms,
    huber_cost,
    huber_weight,
    observation_weight,
    reprojection_residual_weighted,
    visual_jacobians,
)
from .triangulate import triangulate_midpoint
from .bundle import local_bundle_adjust, motion_only_optimize, solve_normal_equations
from .initialize import two_view_initialize, visual_inertial_initialize
from .tracker import Tracker, TrackerConfig

__all__ = [
    "CovisibilityGraph", "KeyframeState", "MapPoint", "SlamMap",
    "batch_visual_terms", "huber_cost", "huber_weight", "observation_weight",
    "reprojection_residual_weighted", "visual_jacobians",
    "triangulate_midpoint",
    "local_bundle_adjust", "motion_only_optimize", "solve_normal_equations",
    "two_view_initialize", "visual_inertial_initialize",
    "Tracker", "TrackerConfig",
]
