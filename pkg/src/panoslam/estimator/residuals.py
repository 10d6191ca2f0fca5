"""Visual residuals, distortion-weighted information, and their Jacobians.

The measurement information follows the distortion weighting: Sigma^{-1} =
sigma^2 I with sigma the per-observation weight, so equator features count
fully and near-pole features are attenuated. Whitened residuals are therefore
sigma * r.

Pose perturbation convention (project-wide): left-multiplicative rotation,
world-additive translation: R <- Exp(d_theta) R, p <- p + dp.
"""

from __future__ import annotations

import math

import numpy as np

from .. import erpcam
from ..erpcam import ErpIntrinsics
from ..geometry import Pose, hat

HUBER_DELTA_2DOF = math.sqrt(5.991)   # 95% chi-square for 2 degrees of freedom
CHI2_2DOF = 5.991


def huber_weight(r_norm: float, delta: float) -> float:
    """IRLS weight of the Huber kernel: 1 inside the knee, delta/|r| outside."""
    if delta <= 0.0:
        raise ValueError("huber delta must be positive")
    r_norm = abs(r_norm)
    return 1.0 if r_norm <= delta else delta / r_norm


def huber_cost(r_norm, delta: float):
    """rho(|r|): quadratic inside the knee, linear outside (continuous at it)."""
    r = np.abs(np.asarray(r_norm, dtype=float))
    out = np.where(r <= delta, r * r, delta * (2.0 * r - delta))
    return float(out) if out.ndim == 0 else out


def observation_weight(v, level, eta: float, intr: ErpIntrinsics):
    return erpcam.distortion_weight(v, level, eta, intr)


def reprojection_residual_weighted(pose: Pose, point_w, obs_pixel, sigma: float,
                                   intr: ErpIntrinsics, extrinsics: Pose | None = None):
    """Wrapped pixel residual and its 2x2 information sigma^2 I."""
    T_cw = (pose if extrinsics is None else pose.compose(extrinsics.inverse())).inverse()
    p_c = T_cw.act(np.asarray(point_w, dtype=float))
    r = erpcam.pixel_residual_wrapped(np.asarray(obs_pixel, dtype=float),
                                      erpcam.project(p_c, intr), intr)
    return r, sigma * sigma * np.eye(2)


def visual_jacobians(pose: Pose, point_w, intr: ErpIntrinsics,
                     extrinsics: Pose | None = None):
    """(F 2x6, E 2x3): residual Jacobians wrt pose perturbation and world point.

    F columns are ordered (d_theta, dp). The residual is obs - projection, so
    both carry the -dProjection sign. E annihilates the ray direction:
    E (P_w - camera_center) = 0.
    """
    point_w = np.asarray(point_w, dtype=float)
    R_bw = pose.r.matrix.T
    if extrinsics is None:
        R_cb = np.eye(3)
        p_c = R_bw @ (point_w - pose.t)
    else:
        R_cb = extrinsics.r.matrix
        p_c = R_cb @ (R_bw @ (point_w - pose.t)) + extrinsics.t
    Jp = erpcam.projection_jacobian(p_c, intr)
    A = Jp @ R_cb @ R_bw                      # dProjection/d(world-frame offset)
    F = np.zeros((2, 6))
    F[:, 0:3] = -A @ hat(point_w - pose.t)
    F[:, 3:6] = A
    E = -A
    return F, E


def batch_visual_terms(R_wb, p_wb, points_w, obs_pixels, intr: ErpIntrinsics,
                       extrinsics: Pose | None = None):
    """Vectorized residuals and Jacobians for n observations.

    Inputs: R_wb (n,3,3), p_wb (n,3), points_w (n,3), obs_pixels (n,2).
    Returns (r (n,2), F (n,2,6), E (n,2,3), valid (n,)) where invalid entries
    (pole band / vertical axis) are zeroed and masked out.
    """
    R_wb = np.asarray(R_wb, dtype=float)
    p_wb = np.asarray(p_wb, dtype=float)
    X = np.asarray(points_w, dtype=float)
    u_obs = np.asarray(obs_pixels, dtype=float)
    n = X.shape[0]

    d_w = X - p_wb                                        # world-frame offset
    P_b = np.einsum("nji,nj->ni", R_wb, d_w)              # R^T (X - p)
    if extrinsics is None:
        P_c = P_b
        R_cb = None
    else:
        R_cb = extrinsics.r.matrix
        P_c = P_b @ R_cb.T + extrinsics.t

    norm = np.linalg.norm(P_c, axis=1)
    rho = np.hypot(P_c[:, 0], P_c[:, 2])
    valid = (norm > 1e-12) & (rho > 1e-6 * np.maximum(norm, 1e-12))

    r = np.zeros((n, 2))
    F = np.zeros((n, 2, 6))
    E = np.zeros((n, 2, 3))
    if not np.any(valid):
        return r, F, E, valid

    Pv = P_c[valid]
    proj = erpcam.project(Pv, intr)
    pole = erpcam.in_pole_band(proj[:, 1], intr)
    if np.any(pole):
        idx = np.nonzero(valid)[0][pole]
        valid = valid.copy()
        valid[idx] = False
        Pv = P_c[valid]
        if Pv.shape[0] == 0:
            return r, F, E, valid
        proj = erpcam.project(Pv, intr)

    r[valid] = erpcam.pixel_residual_wrapped(u_obs[valid], proj, intr)
    Jp = erpcam.projection_jacobian(Pv, intr)             # (m,2,3)
    Rt = np.swapaxes(R_wb[valid], 1, 2)                   # R^T
    A = Jp @ R_cb @ Rt if R_cb is not None else Jp @ Rt   # (m,2,3)

    dv = d_w[valid]
    H = np.zeros((dv.shape[0], 3, 3))
    H[:, 0, 1] = -dv[:, 2]
    H[:, 0, 2] = dv[:, 1]
    H[:, 1, 0] = dv[:, 2]
    H[:, 1, 2] = -dv[:, 0]
    H[:, 2, 0] = -dv[:, 1]
    H[:, 2, 1] = dv[:, 0]

    F[valid, :, 0:3] = -A @ H
    F[valid, :, 3:6] = A
    E[valid] = -A
    return r, F, E, valid
