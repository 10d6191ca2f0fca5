import math

import numpy as np
import pytest

from panoslam import erpcam
from panoslam.erpcam import (
    ErpIntrinsics,
    distortion_weight,
    in_pole_band,
    pixel_residual_wrapped,
    project,
    projection_jacobian,
    unproject,
)
from panoslam.errors import InvalidPointError, PixelBoundsError, PoleSingularityError
from oracles import central_difference

INTR = ErpIntrinsics(1280, 640)


class TestProject:
    def test_forward_axis_maps_to_center(self):
        np.testing.assert_allclose(project([0.0, 0.0, 1.0], INTR), [640.0, 320.0], atol=1e-12)

    def test_right_axis(self):
        np.testing.assert_allclose(project([1.0, 0.0, 0.0], INTR), [960.0, 320.0], atol=1e-12)

    def test_round_trip_specific_point(self):
        P = np.array([0.3, -0.2, 0.9])
        b = unproject(project(P, INTR), INTR)
        np.testing.assert_allclose(b, P / np.linalg.norm(P), atol=1e-9)

    def test_scale_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            P = rng.normal(size=3)
            if np.hypot(P[0], P[2]) < 1e-3:
                continue
            for lam in (0.5, 2.0, 137.0):
                np.testing.assert_allclose(project(lam * P, INTR), project(P, INTR), atol=1e-12)

    def test_zero_point_rejected(self):
        with pytest.raises(InvalidPointError):
            project([0.0, 0.0, 0.0], INTR)

    def test_pole_rejected(self):
        with pytest.raises(PoleSingularityError):
            project([0.0, 1.0, 0.0], INTR)


class TestUnproject:
    def test_center_is_forward(self):
        np.testing.assert_allclose(unproject([640.0, 320.0], INTR), [0.0, 0.0, 1.0], atol=1e-12)

    def test_quarter_width(self):
        np.testing.assert_allclose(unproject([960.0, 320.0], INTR), [1.0, 0.0, 0.0], atol=1e-12)

    def test_round_trip_random_pixels(self):
        rng = np.random.default_rng(1)
        u = rng.uniform(0.0, INTR.width, size=100000)
        v = rng.uniform(0.5 * INTR.height * 0.02, INTR.height * 0.995, size=u.size)
        px = np.stack([u, v], axis=-1)
        b = unproject(px, INTR)
        np.testing.assert_allclose(np.linalg.norm(b, axis=1), 1.0, atol=1e-12)
        back = project(b, INTR)
        err = np.abs(pixel_residual_wrapped(px, back, INTR))
        assert err.max() < 1e-9

    def test_out_of_bounds(self):
        with pytest.raises(PixelBoundsError):
            unproject([1280.0, 320.0], INTR)
        with pytest.raises(PixelBoundsError):
            unproject([10.0, -0.5], INTR)


class TestWrappedResidual:
    def test_zero(self):
        np.testing.assert_allclose(
            pixel_residual_wrapped([5.0, 5.0], [5.0, 5.0], INTR), [0.0, 0.0])

    def test_crosses_seam(self):
        # shortest arc from u=1270 to u=10 goes through the seam: +20 columns
        r = pixel_residual_wrapped([10.0, 100.0], [1270.0, 90.0], INTR)
        np.testing.assert_allclose(r, [20.0, 10.0], atol=1e-12)

    def test_antisymmetric(self):
        r = pixel_residual_wrapped([1270.0, 90.0], [10.0, 100.0], INTR)
        np.testing.assert_allclose(r, [-20.0, -10.0], atol=1e-12)

    def test_bounded_by_half_width(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(0, INTR.width, size=(1000, 2))
        b = rng.uniform(0, INTR.width, size=(1000, 2))
        a[:, 1] = rng.uniform(0, INTR.height, size=1000)
        b[:, 1] = rng.uniform(0, INTR.height, size=1000)
        r = pixel_residual_wrapped(a, b, INTR)
        assert np.all(np.abs(r[:, 0]) <= INTR.width / 2 + 1e-12)
        r_swapped = pixel_residual_wrapped(b, a, INTR)
        np.testing.assert_allclose(r, -r_swapped, atol=1e-9)


class TestDistortionWeight:
    def test_equator_base_level(self):
        assert distortion_weight(INTR.height / 2, 0, 1.2, INTR) == pytest.approx(1.0)

    def test_poles(self):
        assert distortion_weight(0.0, 0, 1.2, INTR) == pytest.approx(0.0, abs=1e-15)
        assert distortion_weight(INTR.height, 0, 1.2, INTR) == pytest.approx(0.0, abs=1e-15)

    def test_spot_value(self):
        # cos(pi/4) / 1.2^2, evaluated in double precision
        expected = math.cos(math.pi / 4.0) / 1.44
        got = distortion_weight(3 * INTR.height / 4, 2, 1.2, INTR)
        assert got == pytest.approx(expected, abs=1e-12)
        assert got == pytest.approx(0.49104637582399136, abs=1e-12)

    def test_monotone_in_latitude_and_level(self):
        v = np.linspace(0.0, INTR.height / 2, 200)
        w = distortion_weight(v, 0, 1.2, INTR)
        assert np.all(np.diff(w) >= -1e-15)
        for lvl in range(7):
            w0 = distortion_weight(300.0, lvl, 1.2, INTR)
            w1 = distortion_weight(300.0, lvl + 1, 1.2, INTR)
            assert w1 < w0


class TestProjectionJacobian:
    def test_values_at_forward_axis(self):
        J = projection_jacobian([0.0, 0.0, 1.0], INTR)
        assert J[1, 1] == pytest.approx(INTR.height / math.pi)
        assert J[0, 0] == pytest.approx(INTR.width / (2 * math.pi))
        assert J[0, 2] == pytest.approx(0.0, abs=1e-15)

    def test_radial_nullspace(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            P = rng.normal(size=3) * rng.uniform(0.5, 50.0)
            if np.hypot(P[0], P[2]) < 1e-3:
                continue
            J = projection_jacobian(P, INTR)
            assert np.linalg.norm(J @ P) < 1e-9 * np.linalg.norm(J)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        worst = 0.0
        checked = 0
        while checked < 100:
            P = rng.normal(size=3) * rng.uniform(0.5, 20.0)
            if np.hypot(P[0], P[2]) < 0.05 * np.linalg.norm(P):
                continue
            # keep away from the seam so plain differences are valid
            if abs(math.atan2(P[0], P[2])) > 0.98 * math.pi:
                continue
            J = projection_jacobian(P, INTR)
            J_fd = central_difference(lambda x: project(x, INTR), P, 1e-6 * np.linalg.norm(P))
            rel = np.abs(J - J_fd).max() / np.abs(J).max()
            worst = max(worst, rel)
            checked += 1
        assert worst < 1e-5

    def test_pole_singularity_raises(self):
        with pytest.raises(PoleSingularityError):
            projection_jacobian([1e-9, 1.0, 1e-9], INTR)


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        ErpIntrinsics(1280, 480)
    with pytest.raises(ValueError):
        ErpIntrinsics(0, 0)


def test_pole_band_mask():
    assert not in_pole_band(320.0, INTR)
    assert in_pole_band(2.0, INTR)
    assert in_pole_band(INTR.height - 2.0, INTR)
