"""Equirectangular (ERP) camera model.

The full sphere maps to a 2:1 image: longitude theta = atan2(x, z) spans the
width, latitude phi = asin(y / |P|) spans the height. Camera frame is
z forward, x right, y down, so growing phi means growing row index v.

    u = (W / 2pi) * theta + W / 2
    v = (H / pi)  * phi   + H / 2

Pixel coordinates are continuous; all functions are pure and accept either a
single point/pixel or an (N, ...) batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidPointError, PixelBoundsError, PoleSingularityError

# latitude band excluded around the poles: |v - H/2| > POLE_BAND_FRACTION * H
# is rejected for features and observations (the Jacobian degenerates there
# and the distortion weight is ~0 anyway)
POLE_BAND_FRACTION = 0.49

_POLE_EPS = 1e-8


@dataclass(frozen=True)
class ErpIntrinsics:
    """Panoramic image dimensions; a full 360 x 180 ERP has width = 2 * height."""

    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image dimensions must be positive: {self.width}x{self.height}")
        if self.width != 2 * self.height:
            raise ValueError(f"ERP image must be 2:1, got {self.width}x{self.height}")

    @property
    def fu(self) -> float:
        return self.width / (2.0 * math.pi)

    @property
    def fv(self) -> float:
        return self.height / math.pi


def in_pole_band(v, intr: ErpIntrinsics):
    """True where the row coordinate falls inside the excluded polar band."""
    v = np.asarray(v, dtype=float)
    return np.abs(v - 0.5 * intr.height) > POLE_BAND_FRACTION * intr.height


def project(point, intr: ErpIntrinsics) -> np.ndarray:
    """Project camera-frame point(s) to continuous pixel coordinates.

    Scale invariant: project(lambda * P) == project(P) for lambda > 0.
    Raises for zero-norm points and for points on the vertical axis.
    """
    P = np.asarray(point, dtype=float)
    single = P.ndim == 1
    P = np.atleast_2d(P)
    x, y, z = P[:, 0], P[:, 1], P[:, 2]
    norm = np.sqrt(x * x + y * y + z * z)
    if np.any(norm == 0.0):
        raise InvalidPointError("cannot project a zero-norm point")
    rho = np.hypot(x, z)
    if np.any(rho < _POLE_EPS * norm):
        raise PoleSingularityError("point lies on the vertical camera axis")
    theta = np.arctan2(x, z)
    phi = np.arcsin(np.clip(y / norm, -1.0, 1.0))
    u = intr.fu * theta + 0.5 * intr.width
    v = intr.fv * phi + 0.5 * intr.height
    out = np.stack([u, v], axis=-1)
    return out[0] if single else out


def unproject(pixel, intr: ErpIntrinsics) -> np.ndarray:
    """Unit bearing vector(s) for pixel coordinates with 0 <= u < W, 0 <= v <= H."""
    px = np.asarray(pixel, dtype=float)
    single = px.ndim == 1
    px = np.atleast_2d(px)
    u, v = px[:, 0], px[:, 1]
    if np.any(u < 0.0) or np.any(u >= intr.width) or np.any(v < 0.0) or np.any(v > intr.height):
        raise PixelBoundsError(f"pixel outside [0,{intr.width})x[0,{intr.height}]")
    theta = (u - 0.5 * intr.width) / intr.fu
    phi = (v - 0.5 * intr.height) / intr.fv
    cp = np.cos(phi)
    b = np.stack([cp * np.sin(theta), np.sin(phi), cp * np.cos(theta)], axis=-1)
    return b[0] if single else b


def wrap_du(du, width: float):
    """Shortest horizontal arc on the periodic image: result in [-W/2, W/2]."""
    return np.mod(np.asarray(du, dtype=float) + 0.5 * width, width) - 0.5 * width


def pixel_residual_wrapped(obs, proj, intr: ErpIntrinsics) -> np.ndarray:
    """obs - proj with the horizontal component wrapped across the seam."""
    obs = np.asarray(obs, dtype=float)
    proj = np.asarray(proj, dtype=float)
    d = obs - proj
    du = wrap_du(d[..., 0], intr.width)
    return np.stack([du, d[..., 1]], axis=-1)


def distortion_weight(v, level, eta: float, intr: ErpIntrinsics):
    """Latitude-dependent feature weight: cos((v/H - 1/2) pi) / eta^level.

    1 at the equator and base pyramid level, 0 at the poles; strictly
    decreasing in level.
    """
    v = np.asarray(v, dtype=float)
    level = np.asarray(level)
    w = np.cos((v / intr.height - 0.5) * math.pi) / eta ** level
    # cos can come out at -1e-17 for v at an exact pole
    w = np.clip(w, 0.0, 1.0)
    return float(w) if w.ndim == 0 else w


def projection_jacobian(point, intr: ErpIntrinsics) -> np.ndarray:
    """Analytic 2x3 Jacobian d(u,v)/dP of the projection, batched as (N,2,3).

    The radial direction is unobservable: J @ P = 0.
    """
    P = np.asarray(point, dtype=float)
    single = P.ndim == 1
    P = np.atleast_2d(P)
    x, y, z = P[:, 0], P[:, 1], P[:, 2]
    r2 = x * x + y * y + z * z
    rho2 = x * x + z * z
    rho = np.sqrt(rho2)
    if np.any(rho < _POLE_EPS):
        raise PoleSingularityError("projection Jacobian undefined at the vertical axis")
    J = np.zeros((P.shape[0], 2, 3))
    J[:, 0, 0] = intr.fu * z / rho2
    J[:, 0, 2] = -intr.fu * x / rho2
    J[:, 1, 0] = -intr.fv * x * y / (rho * r2)
    J[:, 1, 1] = intr.fv * rho / r2
    J[:, 1, 2] = -intr.fv * z * y / (rho * r2)
    return J[0] if single else J
