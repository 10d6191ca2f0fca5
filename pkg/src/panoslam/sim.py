"""Analytic ground-truth simulator: closed-form trajectories, random landmark
worlds, IMU synthesis at 1 kHz and ERP observations at 30 fps.

Everything is deterministic given the seed. Ground-truth values (poses,
velocities, biases) are kept alongside the noisy streams so estimator tests
can compare against exact references.

Attitude model: pure yaw on top of a fixed base attitude that puts the camera
z axis (forward) along world +x, camera y (down) along world -z. Landmarks are
visible omnidirectionally within a configurable range band; there is no
frustum and no occlusion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import erpcam
from .erpcam import ErpIntrinsics
from .geometry import Pose, Rotation
from .imu import GRAVITY_WORLD, ImuNoise, ImuStream

# world axes of the body axes at yaw 0: x_body -> -y_w, y_body -> -z_w, z_body -> +x_w
R0_WORLD_FROM_BODY = np.array([
    [0.0, 0.0, 1.0],
    [-1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
])


def yaw_attitude(psi: float) -> Rotation:
    c, s = math.cos(psi), math.sin(psi)
    Rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return Rotation.from_matrix(Rz @ R0_WORLD_FROM_BODY)


@dataclass(frozen=True)
class TrajectoryModel:
    """Closed-form trajectory: circle, figure-eight (Gerono) or climbing helix.

    The attitude follows the planar velocity heading plus a sinusoidal yaw
    offset (yaw_amplitude, yaw_period). All kinematic quantities have exact
    analytic derivatives.
    """

    kind: str = "circle"
    radius: float = 20.0          # meters; lobe half-length for figure-eight
    radius_y: float = 10.0        # lateral half-width for figure-eight
    speed: float = 5.0            # mean speed used to pick the angular rate
    altitude: float = 5.0
    climb_rate: float = 0.0       # helix only, m/s
    alt_amplitude: float = 0.0    # figure-eight altitude bob, m
    yaw_amplitude: float = 0.0    # extra yaw wobble, rad
    yaw_period: float = 4.0       # s
    phase: float = 0.0            # parameter offset u0
    duration: float = 20.0
    attitude: str = "heading"     # "heading" or "identity" (world-aligned body)

    def __post_init__(self):
        if self.kind not in ("circle", "figure8", "helix"):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.attitude not in ("heading", "identity"):
            raise ValueError(f"unknown attitude mode {self.attitude!r}")
        if self.duration <= 0.0 or self.radius <= 0.0 or self.speed <= 0.0:
            raise ValueError("duration, radius and speed must be positive")

    @property
    def omega(self) -> float:
        """Parameter rate chosen so the mean speed matches `speed`."""
        if self.kind == "figure8":
            # mean of sqrt(A^2 cos^2 u + B^2 cos^2 2u) over u, computed once
            u = np.linspace(0.0, 2.0 * math.pi, 4096, endpoint=False)
            mean = float(np.mean(np.hypot(self.radius * np.cos(u),
                                          self.radius_y * np.cos(2.0 * u))))
            return self.speed / mean
        return self.speed / self.radius

    def path_length(self) -> float:
        t = np.linspace(0.0, self.duration, 8192)
        p = np.stack([self.position(tt) for tt in t])
        return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum())

    def _planar(self, t: float):
        """(p, v, a) without the altitude channel."""
        w = self.omega
        u = w * t + self.phase
        if self.kind == "figure8":
            A, B = self.radius, self.radius_y
            p = np.array([A * math.sin(u), B * math.sin(u) * math.cos(u)])
            v = w * np.array([A * math.cos(u), B * math.cos(2.0 * u)])
            a = w * w * np.array([-A * math.sin(u), -2.0 * B * math.sin(2.0 * u)])
            return p, v, a
        A = self.radius
        p = np.array([A * math.cos(u), A * math.sin(u)])
        v = w * np.array([-A * math.sin(u), A * math.cos(u)])
        a = w * w * np.array([-A * math.cos(u), -A * math.sin(u)])
        return p, v, a

    def _alt(self, t: float):
        """(z, dz, ddz)."""
        w = self.omega
        u = w * t + self.phase
        z = self.altitude
        dz = ddz = 0.0
        if self.kind == "helix":
            z += self.climb_rate * t
            dz = self.climb_rate
        if self.alt_amplitude != 0.0:
            z += self.alt_amplitude * math.sin(u)
            dz += self.alt_amplitude * w * math.cos(u)
            ddz = -self.alt_amplitude * w * w * math.sin(u)
        return z, dz, ddz

    def position(self, t: float) -> np.ndarray:
        p2, _, _ = self._planar(t)
        z, _, _ = self._alt(t)
        return np.array([p2[0], p2[1], z])

    def _yaw(self, t: float):
        """(psi, dpsi): velocity heading plus the configured wobble."""
        _, v, a = self._planar(t)
        psi = math.atan2(v[1], v[0])
        dpsi = (v[0] * a[1] - v[1] * a[0]) / float(v @ v)
        if self.yaw_amplitude != 0.0:
            ww = 2.0 * math.pi / self.yaw_period
            psi += self.yaw_amplitude * math.sin(ww * t)
            dpsi += self.yaw_amplitude * ww * math.cos(ww * t)
        return psi, dpsi


def sample_trajectory(model: TrajectoryModel, t: float):
    """Exact kinematics at time t: (Pose, v_world, a_world, omega_body)."""
    if t < -1e-12 or t > model.duration + 1e-12:
        raise ValueError(f"t={t} outside trajectory duration [0, {model.duration}]")
    p2, v2, a2 = model._planar(t)
    z, dz, ddz = model._alt(t)
    v = np.array([v2[0], v2[1], dz])
    a = np.array([a2[0], a2[1], ddz])
    if model.attitude == "identity":
        return Pose(Rotation.identity(), np.array([p2[0], p2[1], z])), v, a, np.zeros(3)
    psi, dpsi = model._yaw(t)
    pose = Pose(yaw_attitude(psi), np.array([p2[0], p2[1], z]))
    omega_body = pose.r.matrix.T @ np.array([0.0, 0.0, dpsi])
    return pose, v, a, omega_body


@dataclass(frozen=True)
class WorldConfig:
    landmark_count: int = 600
    bbox_min: tuple = (-35.0, -25.0, 0.0)
    bbox_max: tuple = (35.0, 25.0, 15.0)
    seed: int = 0


class World:
    """Random landmarks with one stable 256-bit descriptor each."""

    def __init__(self, config: WorldConfig):
        self.config = config
        rng = np.random.default_rng([config.seed, 0])
        lo = np.asarray(config.bbox_min, dtype=float)
        hi = np.asarray(config.bbox_max, dtype=float)
        self.points = rng.uniform(lo, hi, size=(config.landmark_count, 3))
        self.descriptors = rng.integers(0, 256, size=(config.landmark_count, 32),
                                        dtype=np.uint8)


@dataclass(frozen=True)
class SimNoise:
    """Measurement corruption; zeros everywhere give a perfectly consistent world."""

    pixel_sigma: float = 0.0
    descriptor_bit_flip: float = 0.0
    imu: ImuNoise | None = None           # None synthesizes an exact IMU
    initial_gyro_bias: tuple = (0.0, 0.0, 0.0)
    initial_accel_bias: tuple = (0.0, 0.0, 0.0)


@dataclass
class FrameObservations:
    """Per-frame landmark sightings (already in ERP pixel coordinates)."""

    ids: np.ndarray          # (n,) int landmark ids
    pixels: np.ndarray       # (n, 2) float
    levels: np.ndarray       # (n,) int pyramid level
    descriptors: np.ndarray  # (n, 32) uint8

    def __len__(self):
        return len(self.ids)


def render_observations(world: World, pose: Pose, intr: ErpIntrinsics,
                        pixel_sigma: float, rng, *,
                        range_min: float = 2.0, range_max: float = 80.0,
                        levels: int = 8, bit_flip: float = 0.0,
                        extrinsics: Pose | None = None) -> FrameObservations:
    """Observe every landmark in the range band, full sphere, no occlusion."""
    T_cw = (pose if extrinsics is None else pose.compose(extrinsics.inverse())).inverse()
    P_c = T_cw.act(world.points)
    dist = np.linalg.norm(P_c, axis=1)
    rho = np.hypot(P_c[:, 0], P_c[:, 2])
    ok = (dist >= range_min) & (dist <= range_max) & (rho > 1e-6 * dist)
    ids = np.nonzero(ok)[0]
    if ids.size == 0:
        return FrameObservations(ids, np.zeros((0, 2)), np.zeros(0, int),
                                 np.zeros((0, 32), np.uint8))
    px = erpcam.project(P_c[ids], intr)
    dist = dist[ids]
    keep = ~erpcam.in_pole_band(px[:, 1], intr)
    ids, px, dist = ids[keep], px[keep], dist[keep]
    if pixel_sigma > 0.0:
        px = px + rng.normal(scale=pixel_sigma, size=px.shape)
        px[:, 0] = np.mod(px[:, 0], intr.width)
        inb = (px[:, 1] >= 0.0) & (px[:, 1] <= intr.height) & ~erpcam.in_pole_band(px[:, 1], intr)
        ids, px, dist = ids[inb], px[inb], dist[inb]
    lvl = np.clip(((dist - range_min) / max(range_max - range_min, 1e-9)
                   * levels).astype(int), 0, levels - 1)
    desc = world.descriptors[ids].copy()
    if bit_flip > 0.0:
        flips = rng.random((len(ids), 256)) < bit_flip
        desc ^= np.packbits(flips, axis=1)
    return FrameObservations(ids, px, lvl, desc)


def synthesize_imu(model: TrajectoryModel, noise: SimNoise, seed: int,
                   rate: float = 1000.0):
    """IMU stream plus the true bias trajectory, deterministic per seed.

    gyro  = omega_body + walking bias + white noise
    accel = R^T (a_world - g) + walking bias + white noise
    with noise densities converted to discrete sigmas via sqrt(rate).
    """
    n = int(round(model.duration * rate)) + 1
    t = np.arange(n) / rate
    gyro = np.zeros((n, 3))
    accel = np.zeros((n, 3))
    for k, tk in enumerate(t):
        pose, _, a_world, omega_body = sample_trajectory(model, float(tk))
        gyro[k] = omega_body
        accel[k] = pose.r.matrix.T @ (a_world - GRAVITY_WORLD)

    bias_g = np.tile(np.asarray(noise.initial_gyro_bias, dtype=float), (n, 1))
    bias_a = np.tile(np.asarray(noise.initial_accel_bias, dtype=float), (n, 1))
    if noise.imu is not None:
        rng = np.random.default_rng([seed, 1])
        dt = 1.0 / rate
        walk_g = noise.imu.sigma_bg * math.sqrt(dt) * rng.standard_normal((n, 3))
        walk_a = noise.imu.sigma_ba * math.sqrt(dt) * rng.standard_normal((n, 3))
        bias_g += np.cumsum(walk_g, axis=0) - walk_g
        bias_a += np.cumsum(walk_a, axis=0) - walk_a
        gyro = gyro + bias_g + noise.imu.sigma_g * math.sqrt(rate) * rng.standard_normal((n, 3))
        accel = accel + bias_a + noise.imu.sigma_a * math.sqrt(rate) * rng.standard_normal((n, 3))
    else:
        gyro = gyro + bias_g
        accel = accel + bias_a
    return ImuStream(t, gyro, accel), bias_g, bias_a


@dataclass
class SimDataset:
    """Synthetic world plus everything a pipeline run consumes."""

    intr: ErpIntrinsics
    frame_times: np.ndarray
    gt_poses: list               # Pose per frame
    gt_velocities: np.ndarray    # (F, 3)
    observations: list           # FrameObservations per frame
    imu: ImuStream
    true_bias_g: np.ndarray
    true_bias_a: np.ndarray
    world: World
    model: TrajectoryModel
    noise: SimNoise
    seed: int
    fps: float = 30.0
    imu_rate: float = 1000.0
    range_min: float = 2.0
    range_max: float = 80.0
    levels: int = 8
    eta: float = 1.2


def make_dataset(model: TrajectoryModel,
                 world_config: WorldConfig = WorldConfig(),
                 noise: SimNoise = SimNoise(),
                 seed: int = 0,
                 intr: ErpIntrinsics = ErpIntrinsics(1280, 640),
                 fps: float = 30.0, imu_rate: float = 1000.0,
                 range_min: float = 2.0, range_max: float = 80.0,
                 levels: int = 8, eta: float = 1.2) -> SimDataset:
    world = World(world_config)
    imu, bias_g, bias_a = synthesize_imu(model, noise, seed, imu_rate)
    n_frames = int(round(model.duration * fps))
    frame_times = np.arange(n_frames) / fps
    rng_obs = np.random.default_rng([seed, 2])
    poses, vels, obs = [], [], []
    for tk in frame_times:
        pose, v, _, _ = sample_trajectory(model, float(tk))
        poses.append(pose)
        vels.append(v)
        obs.append(render_observations(
            world, pose, intr, noise.pixel_sigma, rng_obs,
            range_min=range_min, range_max=range_max, levels=levels,
            bit_flip=noise.descriptor_bit_flip))
    return SimDataset(intr=intr, frame_times=frame_times, gt_poses=poses,
                      gt_velocities=np.asarray(vels), observations=obs,
                      imu=imu, true_bias_g=bias_g, true_bias_a=bias_a,
                      world=world, model=model, noise=noise, seed=seed,
                      fps=fps, imu_rate=imu_rate, range_min=range_min,
                      range_max=range_max, levels=levels, eta=eta)
