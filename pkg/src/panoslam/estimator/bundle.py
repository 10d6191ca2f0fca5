"""Gauss-Newton bundle adjustment with Schur elimination of map points.

The joint visual-inertial cost is

    sum_edges ||r_imu||^2_{Sigma^-1}  +  sum_obs rho_Huber(||r_px||_{Sigma^-1})

with the visual information sigma^2 I from the distortion weight. Landmarks
are eliminated from the normal equations via their 3x3 diagonal blocks; the
reduced pose system is solved densely for small windows and sparsely for
full-map adjustments. Pure Gauss-Newton steps are tried first; Levenberg
damping engages automatically whenever a step fails to decrease the cost.

Per-keyframe state layout: [d_theta(3), dp(3)] for vision-only problems and
[d_theta(3), dp(3), dv(3), dbg(3), dba(3)] when inertial edges are included.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from ..erpcam import ErpIntrinsics
from ..errors import TrackingFailureError
from ..geometry import Pose, Rotation
from ..imu import (
    ImuBias,
    ImuNoise,
    GRAVITY_WORLD,
    bias_walk_information,
    inertial_residual_jacobians,
    information_matrix,
)
from .residuals import CHI2_2DOF, HUBER_DELTA_2DOF, batch_visual_terms, huber_cost, huber_weight
from .slam_map import SlamMap

_DENSE_LIMIT = 900  # reduced systems up to this dimension solve densely


@dataclass
class NormalSystem:
    """One linearization of the window problem, ready for elimination."""

    free_ids: list
    point_ids: list
    dim: int                    # per-keyframe state dimension (6 or 15)
    diag_pose: np.ndarray       # (K, dim, dim)
    b_pose: np.ndarray          # (K, dim)
    pose_blocks: dict           # {(a, b): (dim, dim)} off-diagonal couplings, a < b
    H_ll: np.ndarray            # (P, 3, 3)
    b_l: np.ndarray             # (P, 3)
    W: np.ndarray               # (n_free_obs, 6, 3) pose-landmark coupling
    W_kf: np.ndarray            # (n_free_obs,) keyframe index per coupling
    W_pt: np.ndarray            # (n_free_obs,) point index per coupling


@dataclass
class BundleResult:
    iterations: int
    costs: list                 # robust cost after each accepted iteration (index 0 = initial)
    outliers: list              # (kf_id, mp_id) with post-Huber chi2 above threshold

    @property
    def initial_cost(self):
        return self.costs[0]

    @property
    def final_cost(self):
        return self.costs[-1]


class _WindowProblem:
    """Caches index structure for one BA window over a SlamMap."""

    def __init__(self, slam_map: SlamMap, free_ids, fixed_ids, *,
                 intr: ErpIntrinsics, extrinsics: Pose | None,
                 huber_delta: float, include_inertial: bool,
                 noise: ImuNoise | None, gravity):
        self.map = slam_map
        self.free_ids = list(free_ids)
        self.fixed_ids = [k for k in fixed_ids if k not in set(free_ids)]
        self.intr = intr
        self.extrinsics = extrinsics
        self.delta = huber_delta
        self.inertial = include_inertial
        self.noise = noise
        self.gravity = np.asarray(gravity, dtype=float)
        self.dim = 15 if include_inertial else 6

        free_set = set(self.free_ids)
        pts = set()
        for kf_id in self.free_ids:
            pts.update(slam_map.keyframes[kf_id].observations.keys())
        # points need two problem observations to be adjustable
        involved = free_set | set(self.fixed_ids)
        self.point_ids = sorted(
            p for p in pts
            if sum(1 for k in slam_map.points[p].observations if k in involved) >= 2)
        self.kf_index = {k: i for i, k in enumerate(self.free_ids)}
        self.pt_index = {p: i for i, p in enumerate(self.point_ids)}

        # flatten observations: free keyframes contribute pose+point terms,
        # fixed keyframes only constrain points
        rows = []
        for kf_id in self.free_ids + self.fixed_ids:
            kf = slam_map.keyframes[kf_id]
            for mp_id, obs in kf.observations.items():
                pi = self.pt_index.get(mp_id)
                if pi is None:
                    continue
                rows.append((self.kf_index.get(kf_id, -1), pi, kf_id, mp_id,
                             obs.pixel[0], obs.pixel[1], obs.weight))
        self.obs_kf = np.array([r[0] for r in rows], dtype=int)
        self.obs_pt = np.array([r[1] for r in rows], dtype=int)
        self.obs_keys = [(r[2], r[3]) for r in rows]
        self.obs_px = np.array([[r[4], r[5]] for r in rows], dtype=float).reshape(-1, 2)
        self.obs_sigma = np.array([r[6] for r in rows], dtype=float)
        self.obs_kf_source = np.array([r[2] for r in rows], dtype=int)

        # inertial edges between consecutive keyframes inside the problem
        self.edges = []
        if include_inertial:
            for kf_id in self.free_ids:
                kf = slam_map.keyframes[kf_id]
                if kf.pre_from_prev is None or kf.prev_id is None:
                    continue
                if kf.prev_id in free_set or kf.prev_id in set(self.fixed_ids):
                    self.edges.append((kf.prev_id, kf_id))

    # -- state access ------------------------------------------------------

    def snapshot(self):
        states = {k: (self.map.keyframes[k].pose, self.map.keyframes[k].velocity.copy(),
                      self.map.keyframes[k].bias) for k in self.free_ids}
        points = {p: self.map.points[p].position.copy() for p in self.point_ids}
        return states, points

    def restore(self, snap):
        states, points = snap
        for k, (pose, v, bias) in states.items():
            kf = self.map.keyframes[k]
            kf.pose, kf.velocity, kf.bias = pose, v, bias
        for p, pos in points.items():
            self.map.points[p].position = pos

    def apply_step(self, dx_pose: np.ndarray, dx_points: np.ndarray):
        for k, kf_id in enumerate(self.free_ids):
            kf = self.map.keyframes[kf_id]
            d = dx_pose[k]
            kf.pose = Pose(Rotation.exp(d[0:3]).compose(kf.pose.r), kf.pose.t + d[3:6])
            if self.dim == 15:
                kf.velocity = kf.velocity + d[6:9]
                kf.bias = ImuBias(kf.bias.b_g + d[9:12], kf.bias.b_a + d[12:15])
        for i, mp_id in enumerate(self.point_ids):
            self.map.points[mp_id].position = self.map.points[mp_id].position + dx_points[i]

    # -- evaluation --------------------------------------------------------

    def _visual_eval(self):
        n = len(self.obs_kf)
        if n == 0:
            z = np.zeros((0,))
            return np.zeros((0, 2)), np.zeros((0, 2, 6)), np.zeros((0, 2, 3)), z.astype(bool), z
        R = np.stack([self.map.keyframes[k].pose.r.matrix for k in self.obs_kf_source])
        p = np.stack([self.map.keyframes[k].pose.t for k in self.obs_kf_source])
        X = np.stack([self.map.points[self.point_ids[i]].position for i in self.obs_pt])
        r, F, E, valid = batch_visual_terms(R, p, X, self.obs_px, self.intr, self.extrinsics)
        wnorm = np.linalg.norm(r, axis=1) * self.obs_sigma
        return r, F, E, valid, wnorm

    def _inertial_eval(self, with_jacobians: bool):
        """Whitened inertial + bias-walk terms per edge.

        Yields (a, b, r_whitened, J_a, J_b) with Jacobians already whitened
        and embedded in the full per-keyframe state dimension (or None when
        not requested).
        """
        D = self.dim
        out = []
        for a, b in self.edges:
            kfa, kfb = self.map.keyframes[a], self.map.keyframes[b]
            pre = kfb.pre_from_prev
            r, J_i, J_j = inertial_residual_jacobians(
                kfa.pose, kfa.velocity, kfa.bias, kfb.pose, kfb.velocity,
                pre, self.gravity)
            L = np.linalg.cholesky(information_matrix(pre))
            if with_jacobians:
                Ja = L.T @ J_i
                Jb = np.zeros((9, D))
                Jb[:, 0:9] = L.T @ J_j
            else:
                Ja = Jb = None
            out.append((a, b, L.T @ r, Ja, Jb))
            if self.noise is not None:
                rb = np.concatenate([kfb.bias.b_g - kfa.bias.b_g,
                                     kfb.bias.b_a - kfa.bias.b_a])
                lw = np.sqrt(np.diag(bias_walk_information(self.noise, pre.dt_total)))
                if with_jacobians:
                    Ja = np.zeros((6, D))
                    Ja[:, 9:15] = -np.diag(lw)
                    Jb = np.zeros((6, D))
                    Jb[:, 9:15] = np.diag(lw)
                else:
                    Ja = Jb = None
                out.append((a, b, lw * rb, Ja, Jb))
        return out

    def cost(self) -> float:
        _, _, _, valid, wnorm = self._visual_eval()
        c = float(np.sum(huber_cost(wnorm[valid], self.delta)))
        for _, _, r_w, _, _ in self._inertial_eval(False):
            c += float(r_w @ r_w)
        return c

    # -- assembly ----------------------------------------------------------

    def build_system(self) -> NormalSystem:
        K, P, D = len(self.free_ids), len(self.point_ids), self.dim
        diag_pose = np.zeros((K, D, D))
        b_pose = np.zeros((K, D))
        H_ll = np.zeros((P, 3, 3))
        b_l = np.zeros((P, 3))
        pose_blocks: dict = {}

        r, F, E, valid, wnorm = self._visual_eval()
        w_h = np.ones_like(wnorm)
        big = wnorm > self.delta
        w_h[big] = self.delta / wnorm[big]
        w = np.where(valid, w_h * self.obs_sigma ** 2, 0.0)

        Fw = F * w[:, None, None]
        Ew = E * w[:, None, None]
        free = self.obs_kf >= 0

        # landmark blocks (all observations)
        np.add.at(H_ll, self.obs_pt, np.einsum("nki,nkj->nij", Ew, E))
        np.add.at(b_l, self.obs_pt, -np.einsum("nki,nk->ni", Ew, r))

        # pose blocks and pose-landmark couplings (free keyframes only)
        kf_f = self.obs_kf[free]
        pt_f = self.obs_pt[free]
        Ff, Ef, rf = F[free], E[free], r[free]
        Fwf = Fw[free]
        diag6 = diag_pose[:, 0:6, 0:6]
        np.add.at(diag6, kf_f, np.einsum("nki,nkj->nij", Fwf, Ff))
        b6 = b_pose[:, 0:6]
        np.add.at(b6, kf_f, -np.einsum("nki,nk->ni", Fwf, rf))
        W = np.einsum("nki,nkj->nij", Fwf, Ef)

        for a, b, r_w, J_i, J_j in self._inertial_eval(True):
            ia = self.kf_index.get(a)
            ib = self.kf_index.get(b)
            if isinstance(J_i, str):  # bias random-walk edge
                Jw = np.zeros((6, D))
                Jw[:, 9:15] = np.eye(6)
                Lb = r_w  # already whitened residual
                Wt = np.sqrt(np.diag(bias_walk_information(
                    self.noise, self.map.keyframes[b].pre_from_prev.dt_total)))
                Ji_full = -np.diag(Wt) @ Jw[:, :]
                Jj_full = np.diag(Wt) @ Jw[:, :]
            else:
                Ji_full = np.zeros((9, D))
                Ji_full[:, 0:15] = J_i
                Jj_full = np.zeros((9, D))
                Jj_full[:, 0:9] = J_j
                Lb = r_w
            for idx, J in ((ia, Ji_full), (ib, Jj_full)):
                if idx is None:
                    continue
                diag_pose[idx] += J.T @ J
                b_pose[idx] += -J.T @ Lb
            if ia is not None and ib is not None:
                key = (min(ia, ib), max(ia, ib))
                Ja, Jb = (Ji_full, Jj_full) if ia < ib else (Jj_full, Ji_full)
                blk = Ja.T @ Jb
                pose_blocks[key] = pose_blocks.get(key, 0.0) + blk

        return NormalSystem(self.free_ids, self.point_ids, D, diag_pose, b_pose,
                            pose_blocks, H_ll, b_l, W, kf_f.copy(), pt_f.copy())

    def flag_outliers(self):
        _, _, _, valid, wnorm = self._visual_eval()
        bad = valid & (wnorm ** 2 > CHI2_2DOF)
        return [self.obs_keys[i] for i in np.nonzero(bad)[0]]


def _damp(M: np.ndarray, lam: float) -> np.ndarray:
    if lam == 0.0:
        return M
    out = M.copy()
    idx = np.arange(M.shape[-1])
    out[..., idx, idx] *= (1.0 + lam)
    out[..., idx, idx] += lam * 1e-9
    return out


def solve_normal_equations(system: NormalSystem, damping: float = 0.0):
    """Schur-eliminate the landmarks and solve the reduced pose system.

    Returns (dx_pose (K, dim), dx_points (P, 3)). With damping = 0 this is the
    exact Gauss-Newton step and equals the dense solve of the full system.
    """
    K, P, D = len(system.free_ids), len(system.point_ids), system.dim
    diag_pose = _damp(system.diag_pose, damping)
    H_ll = _damp(system.H_ll, damping)

    if P:
        H_ll_inv = np.linalg.inv(H_ll)
    else:
        H_ll_inv = np.zeros((0, 3, 3))

    b_s = system.b_pose.copy()
    S6 = np.zeros((K, K, 6, 6))
    if len(system.W):
        Y = np.einsum("nij,njk->nik", system.W, H_ll_inv[system.W_pt])
        np.add.at(b_s[:, 0:6], system.W_kf, -np.einsum("nij,nj->ni", Y, system.b_l[system.W_pt]))
        order = np.argsort(system.W_pt, kind="stable")
        pts_sorted = system.W_pt[order]
        bounds = np.searchsorted(pts_sorted, np.arange(P + 1))
        pi_list, pj_list = [], []
        for p in range(P):
            grp = order[bounds[p]:bounds[p + 1]]
            if len(grp) == 0:
                continue
            gi = np.repeat(grp, len(grp))
            gj = np.tile(grp, len(grp))
            pi_list.append(gi)
            pj_list.append(gj)
        if pi_list:
            gi = np.concatenate(pi_list)
            gj = np.concatenate(pj_list)
            contrib = np.einsum("mik,mjk->mij", Y[gi], system.W[gj])
            np.add.at(S6, (system.W_kf[gi], system.W_kf[gj]), -contrib)

    # reduced system assembly
    n = K * D
    if n <= _DENSE_LIMIT:
        M = np.zeros((n, n))
        for k in range(K):
            M[k * D:k * D + D, k * D:k * D + D] = diag_pose[k]
        a_idx, b_idx = np.nonzero(np.abs(S6).sum(axis=(2, 3)))
        for a, b in zip(a_idx, b_idx):
            M[a * D:a * D + 6, b * D:b * D + 6] += S6[a, b]
        for (a, b), blk in system.pose_blocks.items():
            M[a * D:(a + 1) * D, b * D:(b + 1) * D] += blk
            M[b * D:(b + 1) * D, a * D:(a + 1) * D] += blk.T
        dx = np.linalg.solve(M, b_s.reshape(-1))
    else:
        rows, cols, data = [], [], []

        def put(r0, c0, blk):
            h, w = blk.shape
            rr, cc = np.meshgrid(np.arange(h) + r0, np.arange(w) + c0, indexing="ij")
            rows.append(rr.ravel())
            cols.append(cc.ravel())
            data.append(blk.ravel())

        for k in range(K):
            put(k * D, k * D, diag_pose[k])
        a_idx, b_idx = np.nonzero(np.abs(S6).sum(axis=(2, 3)))
        for a, b in zip(a_idx, b_idx):
            put(a * D, b * D, S6[a, b])
        for (a, b), blk in system.pose_blocks.items():
            put(a * D, b * D, blk)
            put(b * D, a * D, blk.T)
        M = scipy.sparse.csc_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n))
        dx = scipy.sparse.linalg.spsolve(M, b_s.reshape(-1))

    dx_pose = dx.reshape(K, D)

    dx_points = np.zeros((P, 3))
    if P:
        rhs = system.b_l.copy()
        if len(system.W):
            np.add.at(rhs, system.W_pt,
                      -np.einsum("nij,ni->nj", system.W, dx_pose[system.W_kf, 0:6]))
        dx_points = np.einsum("pij,pj->pi", H_ll_inv, rhs)
    return dx_pose, dx_points


def _optimize(problem: _WindowProblem, iterations: int) -> BundleResult:
    cost = problem.cost()
    costs = [cost]
    lam = 0.0
    for _ in range(iterations):
        system = problem.build_system()
        snap = problem.snapshot()
        accepted = False
        for _attempt in range(8):
            dx_p, dx_l = solve_normal_equations(system, lam)
            problem.apply_step(dx_p, dx_l)
            trial = problem.cost()
            if trial <= cost + 1e-15:
                accepted = True
                step_norm = float(np.linalg.norm(dx_p)) + float(np.linalg.norm(dx_l))
                cost = trial
                costs.append(cost)
                lam = lam / 3.0 if lam > 1e-12 else 0.0
                break
            problem.restore(snap)
            lam = max(lam * 10.0, 1e-6)
        if not accepted:
            break
        if costs[-2] - costs[-1] < 1e-14 * max(1.0, costs[-2]) or step_norm < 1e-12:
            break
    return BundleResult(len(costs) - 1, costs, problem.flag_outliers())


def local_bundle_adjust(slam_map: SlamMap, window_ids, *,
                        intr: ErpIntrinsics, extrinsics: Pose | None = None,
                        iterations: int = 8, huber_delta: float = HUBER_DELTA_2DOF,
                        include_inertial: bool = True,
                        noise: ImuNoise | None = None,
                        gravity=GRAVITY_WORLD,
                        fixed_ids=None) -> BundleResult:
    """Minimize the windowed cost over the given keyframes and their points.

    Keyframes outside the window that observe window points are held fixed and
    provide the gauge; if there are none, the oldest window keyframe is fixed
    instead. Returns per-iteration costs (non-increasing) and flagged outliers.
    """
    window_ids = sorted(window_ids)
    if not window_ids:
        raise ValueError("empty bundle adjustment window")
    if fixed_ids is None:
        pts = slam_map.points_in_keyframes(window_ids)
        fixed_ids = sorted({k for p in pts for k in slam_map.points[p].observations}
                           - set(window_ids))
    free_ids = list(window_ids)
    if not fixed_ids:
        fixed_ids = [free_ids[0]]
        free_ids = free_ids[1:]
        if not free_ids:
            raise ValueError("window needs at least one adjustable keyframe")
    problem = _WindowProblem(slam_map, free_ids, fixed_ids, intr=intr,
                             extrinsics=extrinsics, huber_delta=huber_delta,
                             include_inertial=include_inertial, noise=noise,
                             gravity=gravity)
    return _optimize(problem, iterations)


def global_bundle_adjust(slam_map: SlamMap, *, intr: ErpIntrinsics,
                         extrinsics: Pose | None = None, iterations: int = 10,
                         huber_delta: float = HUBER_DELTA_2DOF,
                         include_inertial: bool = True,
                         noise: ImuNoise | None = None,
                         gravity=GRAVITY_WORLD) -> BundleResult:
    """Full-map adjustment with the first keyframe fixed."""
    ids = slam_map.keyframe_ids()
    problem = _WindowProblem(slam_map, ids[1:], [ids[0]], intr=intr,
                             extrinsics=extrinsics, huber_delta=huber_delta,
                             include_inertial=include_inertial, noise=noise,
                             gravity=gravity)
    return _optimize(problem, iterations)


@dataclass
class MotionOnlyResult:
    pose: Pose
    velocity: np.ndarray
    bias: ImuBias
    inliers: np.ndarray         # bool mask over the input matches
    cost: float


def motion_only_optimize(pose: Pose, matches, *, intr: ErpIntrinsics,
                         extrinsics: Pose | None = None,
                         velocity=None, bias: ImuBias | None = None,
                         imu_prior=None, gravity=GRAVITY_WORLD,
                         noise: ImuNoise | None = None,
                         huber_delta: float = HUBER_DELTA_2DOF,
                         iterations: int = 10) -> MotionOnlyResult:
    """Optimize a single frame state against fixed map points.

    `matches` is (points_w (n,3), pixels (n,2), sigmas (n,)). When imu_prior =
    (prev_pose, prev_velocity, prev_bias, preintegration) is given the state
    grows to 15 dims and the inertial residual anchors velocity and bias.
    Raises TrackingFailureError with fewer than 6 inliers after IRLS.
    """
    X, px, sig = (np.asarray(m, dtype=float) for m in matches)
    n = X.shape[0]
    if n < 6:
        raise TrackingFailureError(f"only {n} matches")
    v = np.zeros(3) if velocity is None else np.asarray(velocity, float).copy()
    bias = bias if bias is not None else ImuBias()
    D = 15 if imu_prior is not None else 6

    cost = None
    for _ in range(iterations):
        R = np.broadcast_to(pose.r.matrix, (n, 3, 3))
        p = np.broadcast_to(pose.t, (n, 3))
        r, F, E, valid = batch_visual_terms(R, p, X, px, intr, extrinsics)
        wnorm = np.linalg.norm(r, axis=1) * sig
        w_h = np.ones_like(wnorm)
        big = wnorm > huber_delta
        w_h[big] = huber_delta / wnorm[big]
        w = np.where(valid, w_h * sig ** 2, 0.0)
        H = np.zeros((D, D))
        b = np.zeros(D)
        Fw = F * w[:, None, None]
        H[0:6, 0:6] = np.einsum("nki,nkj->ij", Fw, F)
        b[0:6] = -np.einsum("nki,nk->i", Fw, r)
        new_cost = float(np.sum(huber_cost(wnorm[valid], huber_delta)))

        if imu_prior is not None:
            prev_pose, prev_v, prev_bias, pre = imu_prior
            r9, _, J_j = inertial_residual_jacobians(
                prev_pose, prev_v, prev_bias, pose, v, pre, gravity)
            L = np.linalg.cholesky(information_matrix(pre))
            Jw = L.T @ J_j       # frame state block [d_theta, dp, dv]
            rw = L.T @ r9
            H[0:9, 0:9] += Jw.T @ Jw
            b[0:9] += -Jw.T @ rw
            new_cost += float(rw @ rw)
            if noise is not None:
                rb = np.concatenate([bias.b_g - prev_bias.b_g, bias.b_a - prev_bias.b_a])
                wb = np.diag(bias_walk_information(noise, pre.dt_total))
                H[9:15, 9:15] += np.diag(wb)
                b[9:15] += -wb * rb
                new_cost += float(rb @ (wb * rb))

        # tiny prior keeps unconstrained directions (e.g. bias without a
        # walk term) from going singular
        H[np.arange(D), np.arange(D)] += 1e-9
        dx = np.linalg.solve(H, b)
        pose = Pose(Rotation.exp(dx[0:3]).compose(pose.r), pose.t + dx[3:6])
        if D == 15:
            v = v + dx[6:9]
            bias = ImuBias(bias.b_g + dx[9:12], bias.b_a + dx[12:15])
        if cost is not None and abs(cost - new_cost) < 1e-14 * max(1.0, cost):
            cost = new_cost
            break
        cost = new_cost

    R = np.broadcast_to(pose.r.matrix, (n, 3, 3))
    p = np.broadcast_to(pose.t, (n, 3))
    r, _, _, valid = batch_visual_terms(R, p, X, px, intr, extrinsics)
    chi2 = (np.linalg.norm(r, axis=1) * sig) ** 2
    inliers = valid & (chi2 <= CHI2_2DOF)
    if int(inliers.sum()) < 6:
        raise TrackingFailureError(f"{int(inliers.sum())} inliers after optimization")
    return MotionOnlyResult(pose, v, bias, inliers, float(cost))
