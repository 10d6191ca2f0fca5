"""Two-view midpoint triangulation on world-frame rays."""

from __future__ import annotations

import math

import numpy as np

from ..errors import LowParallaxError
from ..geometry import Pose

MIN_PARALLAX_DEG = 1.0


def triangulate_midpoint(pose_a: Pose, bearing_a, pose_b: Pose, bearing_b,
                         min_parallax_deg: float = MIN_PARALLAX_DEG) -> np.ndarray:
    """Midpoint of the common perpendicular of two camera rays.

    Poses are world-from-camera; bearings are unit camera-frame directions.
    No cheirality constraint: the point may lie 'behind' either camera, which
    is a valid omnidirectional observation. Raises LowParallaxError when the
    rays are too close to parallel or the centers coincide.
    """
    o_a, o_b = pose_a.t, pose_b.t
    if np.linalg.norm(o_b - o_a) < 1e-9:
        raise LowParallaxError("camera centers coincide")
    d_a = pose_a.r.act(np.asarray(bearing_a, dtype=float))
    d_b = pose_b.r.act(np.asarray(bearing_b, dtype=float))
    d_a = d_a / np.linalg.norm(d_a)
    d_b = d_b / np.linalg.norm(d_b)

    cos_ang = abs(float(np.dot(d_a, d_b)))
    angle = math.degrees(math.acos(min(cos_ang, 1.0)))
    if angle < min_parallax_deg:
        raise LowParallaxError(f"ray parallax {angle:.3f} deg below {min_parallax_deg} deg")

    # [s, t] minimizing |(o_a + s d_a) - (o_b + t d_b)|
    w = o_b - o_a
    dab = float(np.dot(d_a, d_b))
    A = np.array([[1.0, -dab], [dab, -1.0]])
    rhs = np.array([float(np.dot(w, d_a)), float(np.dot(w, d_b))])
    s, t = np.linalg.solve(A, rhs)
    return 0.5 * (o_a + s * d_a + o_b + t * d_b)
