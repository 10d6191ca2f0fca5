"""Independent reference implementations used as test oracles.

These deliberately avoid the library's own code paths wherever the point is
to cross-check one: dense homogeneous-matrix algebra for group operations,
quaternion RK4 for IMU integration, central finite differences for Jacobians.
"""

import numpy as np


def se3_matrix(rotation_matrix, translation):
    M = np.eye(4)
    M[:3, :3] = rotation_matrix
    M[:3, 3] = translation
    return M


def sim3_matrix(scale, rotation_matrix, translation):
    M = np.eye(4)
    M[:3, :3] = scale * rotation_matrix
    M[:3, 3] = translation
    return M


def central_difference(f, x, step):
    """Dense Jacobian of f: R^n -> R^m by central differences."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x), dtype=float)
    J = np.zeros((f0.size, x.size))
    for k in range(x.size):
        dx = np.zeros_like(x)
        dx[k] = step
        J[:, k] = (np.asarray(f(x + dx)) - np.asarray(f(x - dx))) / (2.0 * step)
    return J


def _quat_mul(q, r):
    w1, x1, y1, z1 = q
    w2, x2, y2, z2 = r
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def _quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rk4_body_integration(omega_fn, accel_fn, duration, rate):
    """High-rate RK4 of dq/dt = 0.5 q*(0,w), dv/dt = R(q) a, dp/dt = v.

    Integrates bias-free body-frame signals into the same gravity-free deltas
    preintegration accumulates. Returns (R 3x3, v, p) at t = duration.
    """
    n = int(round(duration * rate))
    h = duration / n
    q = np.array([1.0, 0.0, 0.0, 0.0])
    v = np.zeros(3)
    p = np.zeros(3)

    def deriv(t, q, v):
        w = np.asarray(omega_fn(t), dtype=float)
        a = np.asarray(accel_fn(t), dtype=float)
        dq = 0.5 * _quat_mul(q, np.concatenate([[0.0], w]))
        dv = _quat_to_matrix(q / np.linalg.norm(q)) @ a
        return dq, dv

    for k in range(n):
        t = k * h
        dq1, dv1 = deriv(t, q, v)
        dp1 = v
        dq2, dv2 = deriv(t + 0.5 * h, q + 0.5 * h * dq1, v + 0.5 * h * dv1)
        dp2 = v + 0.5 * h * dv1
        dq3, dv3 = deriv(t + 0.5 * h, q + 0.5 * h * dq2, v + 0.5 * h * dv2)
        dp3 = v + 0.5 * h * dv2
        dq4, dv4 = deriv(t + h, q + h * dq3, v + h * dv3)
        dp4 = v + h * dv3
        q = q + (h / 6.0) * (dq1 + 2 * dq2 + 2 * dq3 + dq4)
        v = v + (h / 6.0) * (dv1 + 2 * dv2 + 2 * dv3 + dv4)
        p = p + (h / 6.0) * (dp1 + 2 * dp2 + 2 * dp3 + dp4)
        q /= np.linalg.norm(q)
    return _quat_to_matrix(q), v, p
