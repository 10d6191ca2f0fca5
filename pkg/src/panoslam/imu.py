"""IMU sample model and on-manifold preintegration between keyframes.

Measurements integrate with a midpoint rule (average of consecutive samples
per step, zero-order hold at the stream edges). Deltas (dR, dv, dp) are
independent of gravity and of the initial state; a 9x9 covariance over
(d_theta, d_vel, d_pos) and first-order bias Jacobians are propagated
alongside, so deltas can be re-corrected for small bias changes without
re-integration.

Gravity is fixed to (0, 0, -9.80665) m/s^2 in the world frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ImuStreamError
from .geometry import Pose, Rotation, hat, so3_right_jacobian, so3_right_jacobian_inv

GRAVITY_MAGNITUDE = 9.80665
GRAVITY_WORLD = np.array([0.0, 0.0, -GRAVITY_MAGNITUDE])


@dataclass(frozen=True)
class ImuSample:
    """One inertial measurement: specific force in m/s^2, body rate in rad/s."""

    t: float
    gyro: np.ndarray
    accel: np.ndarray


@dataclass(frozen=True)
class ImuNoise:
    """Continuous-time noise densities (per sqrt(Hz)); defaults from the sensor table."""

    sigma_g: float = 8.29e-5    # gyro noise density, rad/s/sqrt(Hz)
    sigma_a: float = 5.88e-4    # accel noise density, m/s^2/sqrt(Hz)
    sigma_bg: float = 7.85e-5   # gyro bias random walk, rad/s^2/sqrt(Hz)
    sigma_ba: float = 1.84e-4   # accel bias random walk, m/s^3/sqrt(Hz)

    def __post_init__(self):
        for name in ("sigma_g", "sigma_a", "sigma_bg", "sigma_ba"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class ImuBias:
    b_g: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_a: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.b_g, self.b_a])

    @staticmethod
    def from_vector(v) -> "ImuBias":
        v = np.asarray(v, dtype=float).reshape(6)
        return ImuBias(v[:3].copy(), v[3:].copy())


class ImuStream:
    """Columnar IMU sample storage: t (N,), gyro (N,3), accel (N,3)."""

    __slots__ = ("t", "gyro", "accel")

    def __init__(self, t, gyro, accel):
        self.t = np.asarray(t, dtype=float).reshape(-1)
        self.gyro = np.asarray(gyro, dtype=float).reshape(-1, 3)
        self.accel = np.asarray(accel, dtype=float).reshape(-1, 3)
        if not (len(self.t) == len(self.gyro) == len(self.accel)):
            raise ImuStreamError("stream columns disagree in length")
        if len(self.t) and np.any(np.diff(self.t) <= 0.0):
            bad = int(np.argmax(np.diff(self.t) <= 0.0)) + 1
            raise ImuStreamError(f"timestamps not strictly increasing at index {bad}")

    def __len__(self):
        return len(self.t)

    @staticmethod
    def from_samples(samples) -> "ImuStream":
        samples = list(samples)
        return ImuStream([s.t for s in samples],
                         [s.gyro for s in samples],
                         [s.accel for s in samples])

    def slice(self, t0: float, t1: float) -> "ImuStream":
        """Samples with t0 <= t <= t1 (endpoints handled by preintegrate's ZOH edges)."""
        mask = (self.t >= t0) & (self.t <= t1)
        return ImuStream(self.t[mask], self.gyro[mask], self.accel[mask])


class PreintegratedImu:
    """Accumulated relative motion between two timestamps.

    Fields: dt_total, dR (Rotation), dv, dp, cov (9x9 over d_theta/d_vel/d_pos),
    the five bias-Jacobian blocks, and the bias linearization point.
    """

    __slots__ = ("dt_total", "dR", "dv", "dp", "cov",
                 "J_r_bg", "J_v_bg", "J_v_ba", "J_p_bg", "J_p_ba",
                 "bias_lin", "noise")

    def __init__(self, bias_lin: ImuBias, noise: ImuNoise):
        self.dt_total = 0.0
        self.dR = Rotation.identity()
        self.dv = np.zeros(3)
        self.dp = np.zeros(3)
        self.cov = np.zeros((9, 9))
        self.J_r_bg = np.zeros((3, 3))
        self.J_v_bg = np.zeros((3, 3))
        self.J_v_ba = np.zeros((3, 3))
        self.J_p_bg = np.zeros((3, 3))
        self.J_p_ba = np.zeros((3, 3))
        self.bias_lin = bias_lin
        self.noise = noise

    @property
    def bias_jacobian(self) -> np.ndarray:
        """9x6 matrix d(dR, dv, dp)/d(b_g, b_a) in tangent coordinates."""
        J = np.zeros((9, 6))
        J[0:3, 0:3] = self.J_r_bg
        J[3:6, 0:3] = self.J_v_bg
        J[3:6, 3:6] = self.J_v_ba
        J[6:9, 0:3] = self.J_p_bg
        J[6:9, 3:6] = self.J_p_ba
        return J

    def _step(self, dt: float, gyro: np.ndarray, accel: np.ndarray):
        w = gyro - self.bias_lin.b_g
        a = accel - self.bias_lin.b_a
        step = Rotation.exp(w * dt)
        half = self.dR.compose(Rotation.exp(w * (0.5 * dt)))
        # rotating the acceleration with the half-step attitude keeps the
        # scheme second order in dt (start-of-step attitude leaves an
        # uncancelled |w||a| dt^2 / 2 term per step)
        dRh = half.matrix
        Jr = so3_right_jacobian(w * dt)
        dRa_hat = dRh @ hat(a)
        J_r_bg_half = (Rotation.exp(w * (0.5 * dt)).matrix.T @ self.J_r_bg
                       - so3_right_jacobian(w * (0.5 * dt)) * (0.5 * dt))

        # covariance: discrete propagation, noise densities scaled by 1/sqrt(dt)
        A = np.eye(9)
        A[0:3, 0:3] = step.matrix.T
        A[3:6, 0:3] = -dRa_hat * dt
        A[6:9, 0:3] = -0.5 * dRa_hat * dt * dt
        A[6:9, 3:6] = np.eye(3) * dt
        B = np.zeros((9, 6))
        B[0:3, 0:3] = Jr * dt
        B[3:6, 3:6] = dRh * dt
        B[6:9, 3:6] = 0.5 * dRh * dt * dt
        q = np.concatenate([np.full(3, self.noise.sigma_g ** 2 / dt),
                            np.full(3, self.noise.sigma_a ** 2 / dt)])
        self.cov = A @ self.cov @ A.T + B @ (B * q).T

        # bias Jacobians use the pre-update accumulators
        self.J_p_bg += self.J_v_bg * dt - 0.5 * dRa_hat @ J_r_bg_half * dt * dt
        self.J_p_ba += self.J_v_ba * dt - 0.5 * dRh * dt * dt
        self.J_v_bg += -dRa_hat @ J_r_bg_half * dt
        self.J_v_ba += -dRh * dt
        self.J_r_bg = step.matrix.T @ self.J_r_bg - Jr * dt

        self.dp = self.dp + self.dv * dt + 0.5 * (dRh @ a) * dt * dt
        self.dv = self.dv + (dRh @ a) * dt
        self.dR = self.dR.compose(step)
        self.dt_total += dt


def preintegrate(samples, bias: ImuBias, noise: ImuNoise,
                 t_start: float | None = None, t_end: float | None = None) -> PreintegratedImu:
    """Integrate a sample stream into relative-motion deltas.

    Interior steps span consecutive sample timestamps with midpoint-averaged
    measurements; optional t_start/t_end extend the first/last sample by
    zero-order hold so the integration window matches frame boundaries.
    """
    stream = samples if isinstance(samples, ImuStream) else ImuStream.from_samples(samples)
    if len(stream) == 0:
        raise ImuStreamError("empty IMU stream")
    pre = PreintegratedImu(bias, noise)
    if t_start is not None and t_start < stream.t[0]:
        pre._step(stream.t[0] - t_start, stream.gyro[0], stream.accel[0])
    for k in range(len(stream) - 1):
        dt = stream.t[k + 1] - stream.t[k]
        pre._step(dt,
                  0.5 * (stream.gyro[k] + stream.gyro[k + 1]),
                  0.5 * (stream.accel[k] + stream.accel[k + 1]))
    if t_end is not None and t_end > stream.t[-1]:
        pre._step(t_end - stream.t[-1], stream.gyro[-1], stream.accel[-1])
    return pre


def compose_preintegrated(first: PreintegratedImu, second: PreintegratedImu) -> PreintegratedImu:
    """Chain two consecutive preintegrations (same bias linearization point)."""
    if not np.allclose(first.bias_lin.as_vector(), second.bias_lin.as_vector(), atol=1e-12):
        raise ValueError("cannot compose preintegrations with different bias linearization")
    out = PreintegratedImu(first.bias_lin, first.noise)
    R1 = first.dR.matrix
    dt2 = second.dt_total
    out.dt_total = first.dt_total + dt2
    out.dR = first.dR.compose(second.dR)
    out.dv = first.dv + R1 @ second.dv
    out.dp = first.dp + first.dv * dt2 + R1 @ second.dp

    A1 = np.eye(9)
    A1[0:3, 0:3] = second.dR.matrix.T
    A1[3:6, 0:3] = -R1 @ hat(second.dv)
    A1[6:9, 0:3] = -R1 @ hat(second.dp)
    A1[6:9, 3:6] = np.eye(3) * dt2
    A2 = np.eye(9)
    A2[3:6, 3:6] = R1
    A2[6:9, 6:9] = R1
    out.cov = A1 @ first.cov @ A1.T + A2 @ second.cov @ A2.T

    out.J_r_bg = second.dR.matrix.T @ first.J_r_bg + second.J_r_bg
    out.J_v_bg = first.J_v_bg - R1 @ hat(second.dv) @ first.J_r_bg + R1 @ second.J_v_bg
    out.J_v_ba = first.J_v_ba + R1 @ second.J_v_ba
    out.J_p_bg = (first.J_p_bg + first.J_v_bg * dt2
                  - R1 @ hat(second.dp) @ first.J_r_bg + R1 @ second.J_p_bg)
    out.J_p_ba = first.J_p_ba + first.J_v_ba * dt2 + R1 @ second.J_p_ba
    return out


def bias_corrected_deltas(pre: PreintegratedImu, new_bias: ImuBias):
    """First-order delta update for a bias that moved from the linearization point."""
    dbg = new_bias.b_g - pre.bias_lin.b_g
    dba = new_bias.b_a - pre.bias_lin.b_a
    dR = pre.dR.compose(Rotation.exp(pre.J_r_bg @ dbg))
    dv = pre.dv + pre.J_v_bg @ dbg + pre.J_v_ba @ dba
    dp = pre.dp + pre.J_p_bg @ dbg + pre.J_p_ba @ dba
    return dR, dv, dp


def predict_state(pose: Pose, velocity, pre: PreintegratedImu,
                  gravity=GRAVITY_WORLD, bias: ImuBias | None = None):
    """Propagate (pose, velocity) through a preintegrated interval."""
    dR, dv, dp = (pre.dR, pre.dv, pre.dp) if bias is None else bias_corrected_deltas(pre, bias)
    g = np.asarray(gravity, dtype=float)
    v = np.asarray(velocity, dtype=float)
    dt = pre.dt_total
    R_i = pose.r
    p_j = pose.t + v * dt + 0.5 * g * dt * dt + R_i.act(dp)
    v_j = v + g * dt + R_i.act(dv)
    return Pose(R_i.compose(dR), p_j), v_j


def inertial_residual(pose_i: Pose, v_i, bias_i: ImuBias,
                      pose_j: Pose, v_j,
                      pre: PreintegratedImu, gravity=GRAVITY_WORLD) -> np.ndarray:
    """9-vector (rotation, velocity, position) residual; zero when the states
    exactly satisfy the preintegrated prediction under bias_i."""
    g = np.asarray(gravity, dtype=float)
    dt = pre.dt_total
    dR, dv, dp = bias_corrected_deltas(pre, bias_i)
    Ri_T = pose_i.r.inverse()
    r_rot = dR.inverse().compose(Ri_T.compose(pose_j.r)).log()
    r_vel = Ri_T.act(np.asarray(v_j, float) - np.asarray(v_i, float) - g * dt) - dv
    r_pos = Ri_T.act(pose_j.t - pose_i.t - np.asarray(v_i, float) * dt - 0.5 * g * dt * dt) - dp
    return np.concatenate([r_rot, r_vel, r_pos])


def inertial_residual_jacobians(pose_i: Pose, v_i, bias_i: ImuBias,
                                pose_j: Pose, v_j,
                                pre: PreintegratedImu, gravity=GRAVITY_WORLD):
    """Residual plus analytic Jacobians wrt both frames' states.

    Perturbations (left-multiplicative rotation, additive everything else):
        R <- Exp(d_theta) R,  p <- p + dp,  v <- v + dv,  b <- b + db.
    Returns (r, J_i, J_j) with J_i 9x15 over [d_theta_i, dp_i, dv_i, dbg, dba]
    and J_j 9x9 over [d_theta_j, dp_j, dv_j].
    """
    g = np.asarray(gravity, dtype=float)
    dt = pre.dt_total
    v_i = np.asarray(v_i, dtype=float)
    v_j = np.asarray(v_j, dtype=float)
    dbg = bias_i.b_g - pre.bias_lin.b_g

    r = inertial_residual(pose_i, v_i, bias_i, pose_j, v_j, pre, gravity)
    r_rot = r[0:3]

    Ri = pose_i.r.matrix
    Rj_T = pose_j.r.matrix.T
    Jr_inv = so3_right_jacobian_inv(r_rot)
    # M = dR(b_lin)^T R_i^T R_j; the bias column accounts for a nonzero
    # correction Exp(J_r_bg * dbg) already applied at the linearization point
    M = pre.dR.matrix.T @ Ri.T @ pose_j.r.matrix
    J_rot_bg = -Jr_inv @ M.T @ so3_right_jacobian(-pre.J_r_bg @ dbg) @ pre.J_r_bg

    w_v = v_j - v_i - g * dt
    w_p = pose_j.t - pose_i.t - v_i * dt - 0.5 * g * dt * dt

    J_i = np.zeros((9, 15))
    J_j = np.zeros((9, 9))
    J_i[0:3, 0:3] = -Jr_inv @ Rj_T
    J_i[0:3, 9:12] = J_rot_bg
    J_i[3:6, 0:3] = Ri.T @ hat(w_v)
    J_i[3:6, 6:9] = -Ri.T
    J_i[3:6, 9:12] = -pre.J_v_bg
    J_i[3:6, 12:15] = -pre.J_v_ba
    J_i[6:9, 0:3] = Ri.T @ hat(w_p)
    J_i[6:9, 3:6] = -Ri.T
    J_i[6:9, 6:9] = -Ri.T * dt
    J_i[6:9, 9:12] = -pre.J_p_bg
    J_i[6:9, 12:15] = -pre.J_p_ba

    J_j[0:3, 0:3] = Jr_inv @ Rj_T
    J_j[3:6, 6:9] = Ri.T
    J_j[6:9, 3:6] = Ri.T
    return r, J_i, J_j


def information_matrix(pre: PreintegratedImu) -> np.ndarray:
    """Inverse preintegration covariance, regularized when (near-)singular."""
    cov = pre.cov
    eps = max(1e-16, 1e-9 * float(np.trace(cov)) / 9.0)
    return np.linalg.inv(cov + eps * np.eye(9))


def bias_walk_information(noise: ImuNoise, dt: float) -> np.ndarray:
    """6x6 information of the bias random-walk residual b_j - b_i over dt seconds."""
    dt = max(dt, 1e-9)
    var = np.concatenate([np.full(3, noise.sigma_bg ** 2 * dt),
                          np.full(3, noise.sigma_ba ** 2 * dt)])
    return np.diag(1.0 / var)
