import math

import numpy as np
import pytest

from panoslam.errors import ImuStreamError
from panoslam.geometry import Pose, Rotation
from panoslam.imu import (
    GRAVITY_WORLD,
    ImuBias,
    ImuNoise,
    ImuSample,
    ImuStream,
    bias_corrected_deltas,
    compose_preintegrated,
    inertial_residual,
    inertial_residual_jacobians,
    information_matrix,
    predict_state,
    preintegrate,
)
from oracles import central_difference, rk4_body_integration

NOISE = ImuNoise()
ZERO_BIAS = ImuBias()


def constant_stream(gyro, accel, duration=1.0, rate=1000.0):
    n = int(duration * rate)
    t = np.arange(n) / rate
    return ImuStream(t, np.tile(gyro, (n, 1)), np.tile(accel, (n, 1)))


def wavy_stream(duration=1.0, rate=1000.0, seed=None):
    t = np.arange(int(duration * rate)) / rate
    gyro = np.stack([0.3 * np.sin(2 * t), 0.2 * np.cos(3 * t), 0.5 + 0.1 * np.sin(t)], axis=1)
    accel = np.stack([np.sin(2 * t), 0.5 * np.cos(t), 9.8 + 0.2 * np.sin(3 * t)], axis=1)
    return ImuStream(t, gyro, accel)


class TestPreintegrate:
    def test_stationary_closed_form(self):
        stream = constant_stream([0.0, 0.0, 0.0], [0.0, 0.0, 9.81])
        pre = preintegrate(stream, ZERO_BIAS, NOISE, t_end=1.0)
        assert pre.dt_total == pytest.approx(1.0)
        np.testing.assert_allclose(pre.dR.matrix, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(pre.dv, [0.0, 0.0, 9.81], atol=1e-9)
        np.testing.assert_allclose(pre.dp, [0.0, 0.0, 4.905], atol=1e-9)

    def test_zero_measurements(self):
        stream = constant_stream([0, 0, 0], [0, 0, 0], duration=0.5)
        pre = preintegrate(stream, ZERO_BIAS, NOISE, t_end=0.5)
        np.testing.assert_allclose(pre.dR.matrix, np.eye(3), atol=1e-15)
        np.testing.assert_allclose(pre.dv, np.zeros(3), atol=1e-15)
        np.testing.assert_allclose(pre.dp, np.zeros(3), atol=1e-15)

    def test_constant_rotation_rate(self):
        stream = constant_stream([0.0, 0.0, 0.1], [0.0, 0.0, 0.0])
        pre = preintegrate(stream, ZERO_BIAS, NOISE, t_end=1.0)
        expected = Rotation.exp([0.0, 0.0, 0.1])
        assert pre.dR.angle_to(expected) < 1e-10

    def test_empty_stream_rejected(self):
        with pytest.raises(ImuStreamError):
            preintegrate(ImuStream([], np.zeros((0, 3)), np.zeros((0, 3))), ZERO_BIAS, NOISE)

    def test_non_monotonic_rejected(self):
        with pytest.raises(ImuStreamError):
            ImuStream([0.0, 0.1, 0.1], np.zeros((3, 3)), np.zeros((3, 3)))

    def test_samples_list_input(self):
        samples = [ImuSample(t=k / 100.0, gyro=np.zeros(3), accel=np.array([0, 0, 9.81]))
                   for k in range(100)]
        pre = preintegrate(samples, ZERO_BIAS, NOISE, t_end=1.0)
        np.testing.assert_allclose(pre.dv, [0, 0, 9.81], atol=1e-9)

    def test_covariance_symmetric_psd(self):
        pre = preintegrate(wavy_stream(), ZERO_BIAS, NOISE, t_end=1.0)
        np.testing.assert_allclose(pre.cov, pre.cov.T, atol=1e-18)
        eigs = np.linalg.eigvalsh(pre.cov)
        assert eigs.min() >= -1e-12

    def test_split_stream_composes(self):
        stream = wavy_stream(duration=1.0)
        full = preintegrate(stream, ZERO_BIAS, NOISE, t_end=1.0)
        # split exactly at a sample timestamp
        t_mid = stream.t[500]
        first = preintegrate(stream.slice(0.0, t_mid), ZERO_BIAS, NOISE)
        second = preintegrate(stream.slice(t_mid, 2.0), ZERO_BIAS, NOISE, t_end=1.0)
        merged = compose_preintegrated(first, second)
        assert merged.dR.angle_to(full.dR) < 1e-9
        np.testing.assert_allclose(merged.dv, full.dv, atol=1e-9)
        np.testing.assert_allclose(merged.dp, full.dp, atol=1e-9)
        # covariance transport is first order; compare relative to its scale
        assert np.abs(merged.cov - full.cov).max() < 1e-3 * np.abs(full.cov).max()
        np.testing.assert_allclose(merged.bias_jacobian, full.bias_jacobian, rtol=1e-9, atol=1e-12)

    def test_against_rk4_oracle(self):
        omega_fn = lambda t: np.array([0.3 * math.sin(2 * t), 0.2 * math.cos(3 * t), 0.5 + 0.1 * math.sin(t)])
        accel_fn = lambda t: np.array([math.sin(2 * t), 0.5 * math.cos(t), 9.8 + 0.2 * math.sin(3 * t)])
        R_ref, v_ref, p_ref = rk4_body_integration(omega_fn, accel_fn, 1.0, 10000.0)
        pre = preintegrate(wavy_stream(duration=1.0, rate=1000.0), ZERO_BIAS, NOISE, t_end=1.0)
        assert np.linalg.norm(p_ref - pre.dp) < 1e-4
        assert Rotation.from_matrix(R_ref).angle_to(pre.dR) < 1e-5


class TestBiasCorrection:
    def test_exact_at_linearization_point(self):
        pre = preintegrate(wavy_stream(), ZERO_BIAS, NOISE, t_end=1.0)
        dR, dv, dp = bias_corrected_deltas(pre, ZERO_BIAS)
        assert dR.angle_to(pre.dR) == 0.0
        np.testing.assert_array_equal(dv, pre.dv)
        np.testing.assert_array_equal(dp, pre.dp)

    def test_gyro_perturbation_first_order(self):
        stream = wavy_stream()
        pre = preintegrate(stream, ZERO_BIAS, NOISE, t_end=1.0)
        new_bias = ImuBias(np.array([1e-3, -1e-3, 5e-4]), np.zeros(3))
        dR, _, _ = bias_corrected_deltas(pre, new_bias)
        re_pre = preintegrate(stream, new_bias, NOISE, t_end=1.0)
        assert dR.angle_to(re_pre.dR) < 1e-6

    def test_accel_perturbation_on_position(self):
        stream = wavy_stream(duration=0.5)
        pre = preintegrate(stream, ZERO_BIAS, NOISE, t_end=0.5)
        new_bias = ImuBias(np.zeros(3), np.array([1e-2, -1e-2, 5e-3]))
        _, _, dp = bias_corrected_deltas(pre, new_bias)
        re_pre = preintegrate(stream, new_bias, NOISE, t_end=0.5)
        assert np.linalg.norm(dp - re_pre.dp) < 1e-5


class TestPredictState:
    def test_gravity_cancellation_when_stationary(self):
        stream = constant_stream([0, 0, 0], [0.0, 0.0, 9.80665])
        pre = preintegrate(stream, ZERO_BIAS, NOISE, t_end=1.0)
        pose, v = predict_state(Pose.identity(), np.zeros(3), pre)
        assert np.linalg.norm(v) < 1e-9
        assert np.linalg.norm(pose.t) < 1e-9

    def test_zero_deltas_keep_state(self):
        stream = constant_stream([0, 0, 0], [0, 0, 0], duration=0.001, rate=1000.0)
        pre = preintegrate(stream, ZERO_BIAS, NOISE)
        start = Pose(Rotation.exp([0.1, 0.2, 0.3]), [1.0, 2.0, 3.0])
        pose, v = predict_state(start, np.zeros(3), pre, gravity=np.zeros(3))
        assert np.linalg.norm(pose.t - start.t) < 1e-12
        assert np.linalg.norm(v) < 1e-12

    def test_free_fall(self):
        stream = constant_stream([0, 0, 0], [0, 0, 0], duration=1.0)
        pre = preintegrate(stream, ZERO_BIAS, NOISE, t_end=1.0)
        pose, v = predict_state(Pose.identity(), np.zeros(3), pre)
        assert pose.t[2] == pytest.approx(-4.9033, abs=1e-3)
        assert v[2] == pytest.approx(-9.80665, abs=1e-9)


class TestInertialResidual:
    def _random_setup(self, seed):
        rng = np.random.default_rng(seed)
        stream = wavy_stream(duration=0.3)
        bias = ImuBias(rng.normal(scale=1e-3, size=3), rng.normal(scale=1e-2, size=3))
        pre = preintegrate(stream, ImuBias(rng.normal(scale=5e-4, size=3),
                                           rng.normal(scale=5e-3, size=3)), NOISE, t_end=0.3)
        pose_i = Pose(Rotation.exp(rng.normal(scale=0.5, size=3)), rng.normal(scale=2.0, size=3))
        v_i = rng.normal(scale=1.0, size=3)
        pose_j, v_j = predict_state(pose_i, v_i, pre, bias=bias)
        # move frame j off the prediction so the residual is generic
        pose_j = Pose(Rotation.exp(rng.normal(scale=0.01, size=3)).compose(pose_j.r),
                      pose_j.t + rng.normal(scale=0.02, size=3))
        v_j = v_j + rng.normal(scale=0.05, size=3)
        return pose_i, v_i, bias, pose_j, v_j, pre

    def test_zero_on_predicted_states(self):
        stream = wavy_stream(duration=0.4)
        pre = preintegrate(stream, ZERO_BIAS, NOISE, t_end=0.4)
        pose_i = Pose(Rotation.exp([0.1, -0.2, 0.3]), [1.0, -2.0, 0.5])
        v_i = np.array([0.3, 0.1, -0.2])
        pose_j, v_j = predict_state(pose_i, v_i, pre)
        r = inertial_residual(pose_i, v_i, ZERO_BIAS, pose_j, v_j, pre)
        assert np.linalg.norm(r) < 1e-9

    def test_small_rotation_offset(self):
        stream = wavy_stream(duration=0.4)
        pre = preintegrate(stream, ZERO_BIAS, NOISE, t_end=0.4)
        pose_i = Pose.identity()
        v_i = np.zeros(3)
        pose_j, v_j = predict_state(pose_i, v_i, pre)
        pose_j2 = Pose(pose_j.r.compose(Rotation.exp([0, 0, 1e-3])), pose_j.t)
        r = inertial_residual(pose_i, v_i, ZERO_BIAS, pose_j2, v_j, pre)
        np.testing.assert_allclose(r[:3], [0, 0, 1e-3], atol=1e-9)
        assert np.linalg.norm(r[3:]) < 1e-12

    def test_jacobians_match_finite_differences(self):
        worst = 0.0
        for seed in range(10):
            pose_i, v_i, bias, pose_j, v_j, pre = self._random_setup(seed)
            r0, J_i, J_j = inertial_residual_jacobians(pose_i, v_i, bias, pose_j, v_j, pre)

            def res(delta):
                d = np.asarray(delta)
                pi = Pose(Rotation.exp(d[0:3]).compose(pose_i.r), pose_i.t + d[3:6])
                vi = v_i + d[6:9]
                bi = ImuBias(bias.b_g + d[9:12], bias.b_a + d[12:15])
                pj = Pose(Rotation.exp(d[15:18]).compose(pose_j.r), pose_j.t + d[18:21])
                vj = v_j + d[21:24]
                return inertial_residual(pi, vi, bi, pj, vj, pre)

            J_fd = central_difference(res, np.zeros(24), 1e-6)
            J = np.hstack([J_i, J_j])
            rel = np.abs(J - J_fd).max() / max(np.abs(J).max(), 1.0)
            worst = max(worst, rel)
        assert worst < 1e-5

    def test_information_regularizes_degenerate_covariance(self):
        pre = preintegrate(constant_stream([0, 0, 0], [0, 0, 0], duration=0.002),
                           ZERO_BIAS, NOISE)
        info = information_matrix(pre)
        assert np.all(np.isfinite(info))
        np.testing.assert_allclose(info, info.T, rtol=1e-9)

    def test_noise_validation(self):
        with pytest.raises(ValueError):
            ImuNoise(sigma_g=0.0)
