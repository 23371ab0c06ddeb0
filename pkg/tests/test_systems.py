from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nanofilter.bench.systems import air_traffic_model, ugv_inputs, ugv_model, wiener_velocity_model
from nanofilter.errors import ConeCollision
from nanofilter.models import check_derivatives


class TestWiener:
    def test_matrices(self):
        model = wiener_velocity_model()
        assert model.A[0, 2] == pytest.approx(0.1)
        assert model.A[1, 3] == pytest.approx(0.1)
        # dt^3 / 3 and dt^2 / 2 with dt = 0.1
        assert model.Q[0, 0] == pytest.approx(3.3333e-4, rel=1e-4)
        assert model.Q[0, 2] == pytest.approx(5e-3)
        assert model.Q[2, 2] == pytest.approx(0.1)
        np.testing.assert_array_equal(model.R, np.eye(2))
        np.testing.assert_array_equal(model.C, np.eye(2, 4))

    def test_maps_match_matrices(self, rng):
        model = wiener_velocity_model()
        x = rng.standard_normal((7, 4))
        np.testing.assert_allclose(model.f(x), x @ model.A.T)
        np.testing.assert_allclose(model.g(x), x[:, :2])


class TestAirTraffic:
    def test_range_and_angles(self):
        model = air_traffic_model()
        y = model.g(np.array([300.0, 3.0, 400.0, 4.0, 0.0]))
        assert y[0] == pytest.approx(502.494, abs=1e-3)
        assert y[1] == pytest.approx(np.arctan2(400.0, 300.0))
        assert y[2] == pytest.approx(np.arctan2(50.0, 500.0))
        # radial speed (3*300 + 4*400) / r
        assert y[3] == pytest.approx(2500.0 / np.sqrt(252500.0))

    def test_zero_turn_is_constant_velocity(self):
        model = air_traffic_model()
        dt = model.params["dt"]
        x = np.array([10.0, 2.0, -5.0, 3.0, 0.0])
        expected = np.array([10.0 + 2.0 * dt, 2.0, -5.0 + 3.0 * dt, 3.0, 0.0])
        np.testing.assert_allclose(model.f(x), expected, atol=1e-14)

    @pytest.mark.parametrize("w", [1e-4, 9.99e-4 / 0.2, 1.01e-3 / 0.2])
    def test_series_branch_is_continuous(self, w):
        # exact trigonometric form evaluated in extended precision
        model = air_traffic_model()
        dt = model.params["dt"]
        x = np.array([10.0, 2.0, -5.0, 3.0, w])
        u = np.longdouble(w) * np.longdouble(dt)
        a = np.sin(u) / np.longdouble(w)
        b = (1 - np.cos(u)) / np.longdouble(w)
        px = 10.0 + a * 2.0 - b * 3.0
        py = -5.0 + b * 2.0 + a * 3.0
        out = model.f(x)
        assert out[0] == pytest.approx(float(px), abs=1e-12)
        assert out[2] == pytest.approx(float(py), abs=1e-12)

    def test_turn_preserves_speed(self):
        model = air_traffic_model()
        x = np.array([0.0, 25.0, 0.0, 1.0, 0.3])
        out = model.f(x)
        assert np.hypot(out[1], out[3]) == pytest.approx(np.hypot(25.0, 1.0))

    def test_unknown_parameter(self):
        with pytest.raises(ValueError, match="unknown model parameters"):
            air_traffic_model({"heigth": 10.0})

    def test_derivatives(self):
        report = check_derivatives(air_traffic_model(), trials=5)
        assert max(report.values()) < 1e-5


class TestUgv:
    def single_cone(self, cone, offset=0.0):
        return ugv_model({"cones": [cone], "lidar_offset": offset})

    def test_cone_ahead(self):
        model = self.single_cone([1.0, 0.0])
        np.testing.assert_allclose(model.g(np.zeros(3)), [1.0, 0.0], atol=1e-15)

    def test_cone_ahead_after_turning(self):
        model = self.single_cone([0.0, 1.0])
        np.testing.assert_allclose(model.g(np.array([0.0, 0.0, np.pi / 2])), [1.0, 0.0], atol=1e-15)

    def test_lidar_offset_shifts_origin(self):
        model = self.single_cone([1.0, 0.0], offset=0.2)
        np.testing.assert_allclose(model.g(np.zeros(3)), [0.8, 0.0], atol=1e-15)

    def test_bearing_wraps_continuously(self):
        # cone straight behind: bearing stays near +-pi, never jumps to 0
        model = self.single_cone([-1.0, 0.0])
        for th in np.linspace(-0.1, 0.1, 21):
            alpha = model.g(np.array([0.0, 0.0, th]))[1]
            assert abs(abs(alpha) - np.pi) <= 0.1 + 1e-12
            assert -np.pi <= alpha <= np.pi

    def test_collision(self):
        model = self.single_cone([0.2, 0.0], offset=0.2)
        with pytest.raises(ConeCollision):
            model.g(np.zeros(3))

    def test_motion(self):
        model = ugv_model()
        dt = model.params["dt"]
        out = model.f(np.array([1.0, 2.0, np.pi / 2]), np.array([1.5, 0.3]))
        np.testing.assert_allclose(out, [1.0, 2.0 + 1.5 * dt, np.pi / 2 + 0.3 * dt], atol=1e-15)

    def test_derivatives(self):
        report = check_derivatives(ugv_model(), trials=5)
        assert max(report.values()) < 1e-5

    def test_default_dimensions(self):
        model = ugv_model()
        assert (model.n, model.m, model.input_dim) == (3, 6, 2)
        assert model.angle_indices == (3, 4, 5)


@given(st.integers(0, 2**31), st.integers(1, 70))
def test_ugv_inputs_deterministic_and_piecewise(seed, T):
    a = ugv_inputs(seed, T)
    np.testing.assert_array_equal(a, ugv_inputs(seed, T))
    assert a.shape == (T, 2)
    assert np.all((a[:, 0] >= 0.5) & (a[:, 0] <= 1.5))
    assert np.all((a[:, 1] >= -0.5) & (a[:, 1] <= 0.5))
    for start in range(0, T, 20):
        seg = a[start : start + 20]
        assert np.all(seg == seg[0])
    # a longer horizon extends the same sequence
    np.testing.assert_array_equal(ugv_inputs(seed, T + 20)[:T], a)
