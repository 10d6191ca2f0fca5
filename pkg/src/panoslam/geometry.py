"""Lie-group types: SO(3), SE(3), Sim(3), plus closed-form point-set alignment.

Conventions fixed project-wide:
  * rotations are stored as unit quaternions (w, x, y, z), matrices are derived;
  * SE(3) tangent ordering is (rotation, translation);
  * Sim(3) tangent ordering is (rotation, translation, log-scale);
  * the log map uses the principal branch; at angle pi the axis is chosen
    deterministically from the largest diagonal element of the matrix.

All types are immutable values and all operations are pure functions.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DegenerateConfigurationError

_SMALL_ANGLE = 1e-10


def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector."""
    v = np.asarray(v, dtype=float).reshape(3)
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def so3_left_jacobian(omega: np.ndarray) -> np.ndarray:
    """Left Jacobian of SO(3): integrates a constant body rate into translation."""
    omega = np.asarray(omega, dtype=float).reshape(3)
    theta = np.linalg.norm(omega)
    W = hat(omega)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + 0.5 * W + W @ W / 6.0
    t2 = theta * theta
    return (np.eye(3)
            + (1.0 - math.cos(theta)) / t2 * W
            + (theta - math.sin(theta)) / (t2 * theta) * (W @ W))


def so3_left_jacobian_inv(omega: np.ndarray) -> np.ndarray:
    omega = np.asarray(omega, dtype=float).reshape(3)
    theta = np.linalg.norm(omega)
    W = hat(omega)
    if theta < _SMALL_ANGLE:
        return np.eye(3) - 0.5 * W + W @ W / 12.0
    half = 0.5 * theta
    coeff = (1.0 / (theta * theta)
             - (1.0 + math.cos(theta)) / (2.0 * theta * math.sin(theta)))
    return np.eye(3) - 0.5 * W + coeff * (W @ W)


def so3_right_jacobian(omega: np.ndarray) -> np.ndarray:
    """Right Jacobian: J_r(w) = J_l(-w)."""
    return so3_left_jacobian(-np.asarray(omega, dtype=float))


def so3_right_jacobian_inv(omega: np.ndarray) -> np.ndarray:
    return so3_left_jacobian_inv(-np.asarray(omega, dtype=float))


class Rotation:
    """Unit-quaternion rotation with a lazily derived matrix form."""

    __slots__ = ("_q", "_mat")

    def __init__(self, wxyz):
        q = np.asarray(wxyz, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if n == 0.0:
            raise ValueError("zero quaternion")
        self._q = q / n
        self._mat = None

    @staticmethod
    def identity() -> "Rotation":
        return Rotation((1.0, 0.0, 0.0, 0.0))

    @staticmethod
    def exp(omega) -> "Rotation":
        """Exponential map so(3) -> SO(3)."""
        omega = np.asarray(omega, dtype=float).reshape(3)
        theta = np.linalg.norm(omega)
        if theta < _SMALL_ANGLE:
            # first-order quaternion; renormalized by the constructor
            return Rotation(np.concatenate(([1.0], 0.5 * omega)))
        axis = omega / theta
        return Rotation(np.concatenate(([math.cos(0.5 * theta)],
                                        math.sin(0.5 * theta) * axis)))

    @staticmethod
    def from_matrix(R) -> "Rotation":
        R = np.asarray(R, dtype=float).reshape(3, 3)
        trace = R[0, 0] + R[1, 1] + R[2, 2]
        if trace > 0.0:
            s = math.sqrt(trace + 1.0) * 2.0
            q = np.array([0.25 * s,
                          (R[2, 1] - R[1, 2]) / s,
                          (R[0, 2] - R[2, 0]) / s,
                          (R[1, 0] - R[0, 1]) / s])
        elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
            s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
            q = np.array([(R[2, 1] - R[1, 2]) / s,
                          0.25 * s,
                          (R[0, 1] + R[1, 0]) / s,
                          (R[0, 2] + R[2, 0]) / s])
        elif R[1, 1] > R[2, 2]:
            s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
            q = np.array([(R[0, 2] - R[2, 0]) / s,
                          (R[0, 1] + R[1, 0]) / s,
                          0.25 * s,
                          (R[1, 2] + R[2, 1]) / s])
        else:
            s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
            q = np.array([(R[1, 0] - R[0, 1]) / s,
                          (R[0, 2] + R[2, 0]) / s,
                          (R[1, 2] + R[2, 1]) / s,
                          0.25 * s])
        return Rotation(q)

    @staticmethod
    def from_quat_xyzw(xyzw) -> "Rotation":
        x, y, z, w = np.asarray(xyzw, dtype=float).reshape(4)
        return Rotation((w, x, y, z))

    @property
    def quat_wxyz(self) -> np.ndarray:
        return self._q.copy()

    @property
    def quat_xyzw(self) -> np.ndarray:
        w, x, y, z = self._q
        return np.array([x, y, z, w])

    @property
    def matrix(self) -> np.ndarray:
        if self._mat is None:
            w, x, y, z = self._q
            xx, yy, zz = x * x, y * y, z * z
            xy, xz, yz = x * y, x * z, y * z
            wx, wy, wz = w * x, w * y, w * z
            self._mat = np.array([
                [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
                [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
                [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
            ])
        return self._mat

    def log(self) -> np.ndarray:
        """Principal-branch log map; deterministic axis at angle pi."""
        w, x, y, z = self._q
        if w < 0.0:  # shortest representative
            w, x, y, z = -w, -x, -y, -z
        vn = math.sqrt(x * x + y * y + z * z)
        if w < 1e-9:
            # angle within ~2e-9 of pi: pick the axis from the largest
            # diagonal of the matrix so the branch is reproducible
            R = self.matrix
            d = np.diag(R)
            k = int(np.argmax(d))
            axis = np.zeros(3)
            axis[k] = math.sqrt(max((d[k] + 1.0) * 0.5, 0.0))
            others = [i for i in range(3) if i != k]
            for i in others:
                axis[i] = (R[k, i] + R[i, k]) / (4.0 * axis[k])
            axis /= np.linalg.norm(axis)
            return math.pi * axis
        if vn < _SMALL_ANGLE:
            return 2.0 * np.array([x, y, z]) / w
        theta = 2.0 * math.atan2(vn, w)
        return theta * np.array([x, y, z]) / vn

    def compose(self, other: "Rotation") -> "Rotation":
        w1, x1, y1, z1 = self._q
        w2, x2, y2, z2 = other._q
        return Rotation((
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ))

    def inverse(self) -> "Rotation":
        w, x, y, z = self._q
        return Rotation((w, -x, -y, -z))

    def act(self, p) -> np.ndarray:
        """Rotate one or many 3-vectors (last axis of size 3)."""
        p = np.asarray(p, dtype=float)
        return p @ self.matrix.T

    def angle_to(self, other: "Rotation") -> float:
        return float(np.linalg.norm(self.inverse().compose(other).log()))

    def __mul__(self, other):
        if isinstance(other, Rotation):
            return self.compose(other)
        return NotImplemented

    def __repr__(self):
        return f"Rotation(wxyz={np.array2string(self._q, precision=6)})"


def so3_exp(omega) -> Rotation:
    return Rotation.exp(omega)


def so3_log(r: Rotation) -> np.ndarray:
    return r.log()


class Pose:
    """Rigid transform in SE(3): x -> R x + t."""

    __slots__ = ("r", "t")

    def __init__(self, rotation: Rotation, translation):
        self.r = rotation
        self.t = np.asarray(translation, dtype=float).reshape(3).copy()

    @staticmethod
    def identity() -> "Pose":
        return Pose(Rotation.identity(), np.zeros(3))

    @staticmethod
    def exp(xi) -> "Pose":
        """SE(3) exponential of a (rotation, translation) tangent 6-vector."""
        xi = np.asarray(xi, dtype=float).reshape(6)
        omega, rho = xi[:3], xi[3:]
        return Pose(Rotation.exp(omega), so3_left_jacobian(omega) @ rho)

    def log(self) -> np.ndarray:
        omega = self.r.log()
        rho = so3_left_jacobian_inv(omega) @ self.t
        return np.concatenate([omega, rho])

    @property
    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.r.matrix
        M[:3, 3] = self.t
        return M

    @staticmethod
    def from_matrix(M) -> "Pose":
        M = np.asarray(M, dtype=float)
        return Pose(Rotation.from_matrix(M[:3, :3]), M[:3, 3])

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.r.compose(other.r), self.r.act(other.t) + self.t)

    def inverse(self) -> "Pose":
        rinv = self.r.inverse()
        return Pose(rinv, -rinv.act(self.t))

    def act(self, p) -> np.ndarray:
        return self.r.act(p) + self.t

    def __mul__(self, other):
        if isinstance(other, Pose):
            return self.compose(other)
        return NotImplemented

    def __repr__(self):
        return f"Pose(t={np.array2string(self.t, precision=4)}, q={np.array2string(self.r.quat_wxyz, precision=4)})"


def se3_exp(xi) -> Pose:
    return Pose.exp(xi)


def se3_log(pose: Pose) -> np.ndarray:
    return pose.log()


def _sim3_w_matrix(omega: np.ndarray, lam: float) -> np.ndarray:
    """Translation mixer of the Sim(3) exponential (reduces to J_l when lam=0)."""
    theta = np.linalg.norm(omega)
    W = hat(omega)
    scale = math.exp(lam)
    eps = 1e-9
    if abs(lam) < eps:
        C = 1.0
        if theta < eps:
            A, B = 0.5, 1.0 / 6.0
        else:
            t2 = theta * theta
            A = (1.0 - math.cos(theta)) / t2
            B = (theta - math.sin(theta)) / (t2 * theta)
    else:
        C = (scale - 1.0) / lam
        if theta < eps:
            l2 = lam * lam
            A = ((lam - 1.0) * scale + 1.0) / l2
            B = (scale * 0.5 * l2 + scale - 1.0 - lam * scale) / (l2 * lam)
        else:
            t2 = theta * theta
            a = scale * math.sin(theta)
            b = scale * math.cos(theta)
            c = t2 + lam * lam
            A = (a * lam + (1.0 - b) * theta) / (theta * c)
            B = (C - ((b - 1.0) * lam + a * theta) / c) / t2
    return A * W + B * (W @ W) + C * np.eye(3)


class SimTransform:
    """Similarity transform: x -> s R x + t, with s > 0."""

    __slots__ = ("s", "r", "t")

    def __init__(self, scale: float, rotation: Rotation, translation):
        scale = float(scale)
        if scale <= 0.0:
            raise ValueError(f"scale must be positive, got {scale}")
        self.s = scale
        self.r = rotation
        self.t = np.asarray(translation, dtype=float).reshape(3).copy()

    @staticmethod
    def identity() -> "SimTransform":
        return SimTransform(1.0, Rotation.identity(), np.zeros(3))

    @staticmethod
    def from_pose(pose: Pose, scale: float = 1.0) -> "SimTransform":
        return SimTransform(scale, pose.r, pose.t)

    def to_pose(self) -> Pose:
        """Drop the scale, keeping rotation and translation as-is."""
        return Pose(self.r, self.t)

    @staticmethod
    def exp(v) -> "SimTransform":
        """Sim(3) exponential of a (rotation, translation, log-scale) 7-vector."""
        v = np.asarray(v, dtype=float).reshape(7)
        omega, rho, lam = v[:3], v[3:6], v[6]
        return SimTransform(math.exp(lam), Rotation.exp(omega),
                            _sim3_w_matrix(omega, lam) @ rho)

    def log(self) -> np.ndarray:
        omega = self.r.log()
        lam = math.log(self.s)
        rho = np.linalg.solve(_sim3_w_matrix(omega, lam), self.t)
        return np.concatenate([omega, rho, [lam]])

    @property
    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.s * self.r.matrix
        M[:3, 3] = self.t
        return M

    def compose(self, other: "SimTransform") -> "SimTransform":
        return SimTransform(self.s * other.s,
                            self.r.compose(other.r),
                            self.s * self.r.act(other.t) + self.t)

    def inverse(self) -> "SimTransform":
        rinv = self.r.inverse()
        return SimTransform(1.0 / self.s, rinv, -rinv.act(self.t) / self.s)

    def act(self, p) -> np.ndarray:
        return self.s * self.r.act(p) + self.t

    def __mul__(self, other):
        if isinstance(other, SimTransform):
            return self.compose(other)
        return NotImplemented

    def __repr__(self):
        return (f"SimTransform(s={self.s:.6g}, t={np.array2string(self.t, precision=4)}, "
                f"q={np.array2string(self.r.quat_wxyz, precision=4)})")


def rotation_between(a, b) -> Rotation:
    """Minimal rotation taking direction a onto direction b."""
    a = np.asarray(a, dtype=float).reshape(3)
    b = np.asarray(b, dtype=float).reshape(3)
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    c = np.cross(a, b)
    d = float(np.dot(a, b))
    if d > 1.0 - 1e-15:
        return Rotation.identity()
    if d < -1.0 + 1e-12:
        # antipodal: rotate pi about any axis orthogonal to a
        axis = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(axis) < 1e-6:
            axis = np.cross(a, [0.0, 1.0, 0.0])
        return Rotation.exp(math.pi * axis / np.linalg.norm(axis))
    angle = math.atan2(np.linalg.norm(c), d)
    return Rotation.exp(angle * c / np.linalg.norm(c))


def align_point_sets(src, dst, with_scale: bool = True) -> SimTransform:
    """Least-squares similarity S minimizing sum ||dst_i - S(src_i)||^2 (Umeyama).

    Needs at least 3 non-collinear correspondences. With with_scale=False the
    returned transform has scale exactly 1 (rigid alignment).
    """
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    dst = np.asarray(dst, dtype=float).reshape(-1, 3)
    if src.shape != dst.shape:
        raise ValueError(f"point sets differ in size: {src.shape} vs {dst.shape}")
    n = src.shape[0]
    if n < 3:
        raise DegenerateConfigurationError(f"need at least 3 correspondences, got {n}")

    mu_src = src.mean(axis=0)
    mu_dst = dst.mean(axis=0)
    src_c = src - mu_src
    dst_c = dst - mu_dst

    cov = dst_c.T @ src_c / n
    sing = np.linalg.svd(src_c, compute_uv=False)
    if sing[1] <= 1e-9 * max(sing[0], 1e-12):
        raise DegenerateConfigurationError("source points are collinear")

    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0.0:
        S[2, 2] = -1.0
    R = U @ S @ Vt

    if with_scale:
        var_src = (src_c ** 2).sum() / n
        scale = float(np.trace(np.diag(D) @ S)) / var_src
        if scale <= 0.0:
            raise DegenerateConfigurationError("non-positive scale from alignment")
    else:
        scale = 1.0

    t = mu_dst - scale * (R @ mu_src)
    return SimTransform(scale, Rotation.from_matrix(R), t)
