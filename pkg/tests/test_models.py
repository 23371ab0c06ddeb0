from __future__ import annotations

import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import seeds
from nanofilter.bench.systems import air_traffic_model, wiener_velocity_model
from nanofilter.cli import read_measurements
from nanofilter.errors import DerivativeMismatch
from nanofilter.gaussian import GaussianBelief
from nanofilter.models import (
    STREAM_MEASUREMENT,
    NoiseSpec,
    StateSpaceModel,
    check_derivatives,
    counter_rng,
    psd_sqrt,
    simulate,
    wrap_angle,
)

LONG_T = 100_000


def scalar_square_model(jacobian):
    return StateSpaceModel(
        n=1,
        m=1,
        f=lambda x, u=None: x,
        g=lambda x: x**2,
        Q=np.eye(1),
        R=np.eye(1),
        g_jacobian=jacobian,
        typical_state=np.array([1.0]),
    )


@pytest.fixture(scope="module")
def wiener():
    return wiener_velocity_model()


@pytest.fixture(scope="module")
def long_clean(wiener):
    return simulate(wiener, GaussianBelief(np.zeros(4), np.eye(4)), LONG_T, NoiseSpec(wiener.R), seed=11)


@pytest.fixture(scope="module")
def long_contaminated(wiener):
    noise = NoiseSpec(wiener.R, 0.1, 1000.0)
    return simulate(wiener, GaussianBelief(np.zeros(4), np.eye(4)), LONG_T, noise, seed=12)


class TestSimulate:
    def test_noiseless_linear_recursion(self):
        a = np.array([[0.9, 0.2], [-0.1, 0.95]])
        c = np.array([[1.0, -1.0]])
        model = StateSpaceModel(
            n=2, m=1, f=lambda x, u=None: x @ a.T, g=lambda x: x @ c.T, Q=np.zeros((2, 2)), R=np.zeros((1, 1)), A=a, C=c
        )
        x0 = np.array([1.0, -2.0])
        tr = simulate(model, GaussianBelief(x0, np.zeros((2, 2))), 6, seed=3)
        for t in range(7):
            np.testing.assert_allclose(tr.states[t], np.linalg.matrix_power(a, t) @ x0, atol=1e-14)
        np.testing.assert_allclose(tr.measurements, tr.states[1:] @ c.T, atol=1e-14)

    def test_measurement_covariance(self, long_clean, wiener):
        resid = long_clean.measurements - long_clean.states[1:] @ wiener.C.T
        emp = np.cov(resid.T)
        assert np.abs(emp - wiener.R).max() <= 0.05 * np.abs(wiener.R).max()
        assert not long_clean.outliers.any()

    def test_outlier_fraction_in_binomial_band(self, long_contaminated):
        frac = long_contaminated.outliers.mean()
        band = 3.0 * np.sqrt(0.1 * 0.9 / LONG_T)
        assert abs(frac - 0.1) <= band

    def test_outliers_inflate_whole_vector(self, long_contaminated, wiener):
        resid = long_contaminated.measurements - long_contaminated.states[1:] @ wiener.C.T
        flagged = resid[long_contaminated.outliers]
        emp = np.cov(flagged.T)
        np.testing.assert_allclose(np.diag(emp), [1000.0, 1000.0], rtol=0.1)

    def test_reproducible(self, wiener):
        b = GaussianBelief(np.zeros(4), np.eye(4))
        one, two = simulate(wiener, b, 20, seed=5), simulate(wiener, b, 20, seed=5)
        assert np.array_equal(one.states, two.states)
        assert np.array_equal(one.measurements, two.measurements)
        assert not np.array_equal(one.states, simulate(wiener, b, 20, seed=6).states)

    def test_prefix_stable_across_horizons(self, wiener):
        b = GaussianBelief(np.zeros(4), np.eye(4))
        short, long = simulate(wiener, b, 10, seed=9), simulate(wiener, b, 30, seed=9)
        assert np.array_equal(short.states, long.states[:11])

    def test_rejects_bad_horizon_and_inputs(self, wiener):
        b = GaussianBelief(np.zeros(4), np.eye(4))
        with pytest.raises(ValueError):
            simulate(wiener, b, 0)
        with pytest.raises(ValueError):
            simulate(wiener, b, 3, inputs=np.zeros((2, 1)))

    def test_angle_channels_wrapped(self):
        model = air_traffic_model()
        tr = simulate(model, GaussianBelief(model.typical_state, np.diag([1e4, 1, 1e4, 1, 1e-4])), 50, seed=1)
        assert np.all(np.abs(tr.measurements[:, 1]) <= np.pi)


class TestNoiseAndRng:
    def test_noise_spec_validation(self):
        with pytest.raises(ValueError):
            NoiseSpec(np.eye(2), outlier_prob=1.5)
        with pytest.raises(ValueError):
            NoiseSpec(np.eye(2), outlier_scale=0.5)

    def test_counter_rng_order_independent(self):
        first = counter_rng(3, 7, STREAM_MEASUREMENT).standard_normal(4)
        for t in range(10):
            counter_rng(3, t, STREAM_MEASUREMENT).standard_normal(4)
        assert np.array_equal(first, counter_rng(3, 7, STREAM_MEASUREMENT).standard_normal(4))
        assert not np.array_equal(first, counter_rng(3, 8, STREAM_MEASUREMENT).standard_normal(4))

    def test_psd_sqrt_singular(self):
        cov = np.array([[1.0, 1.0], [1.0, 1.0]])
        s = psd_sqrt(cov)
        np.testing.assert_allclose(s @ s.T, cov, atol=1e-12)

    @given(st.floats(-50.0, 50.0))
    def test_wrap_angle_range_and_equivalence(self, a):
        w = float(wrap_angle(a))
        assert -np.pi < w <= np.pi
        assert np.cos(w) == pytest.approx(np.cos(a), abs=1e-9)
        assert np.sin(w) == pytest.approx(np.sin(a), abs=1e-9)


class TestCheckDerivatives:
    def test_linear_passes(self, wiener):
        report = check_derivatives(wiener)
        assert max(report.values()) <= 1e-5

    def test_wrong_jacobian_detected(self):
        with pytest.raises(DerivativeMismatch):
            check_derivatives(scalar_square_model(lambda x: (3.0 * x)[..., None]))

    def test_right_jacobian_passes(self):
        check_derivatives(scalar_square_model(lambda x: (2.0 * x)[..., None]))

    def test_air_traffic(self):
        report = check_derivatives(air_traffic_model(), trials=20, rtol=1e-5)
        assert max(report.values()) <= 1e-5


class TestModelValidation:
    def test_indefinite_noise_rejected(self):
        with pytest.raises(ValueError):
            StateSpaceModel(n=1, m=1, f=lambda x, u=None: x, g=lambda x: x, Q=-np.eye(1), R=np.eye(1))

    def test_shape_rejected(self):
        with pytest.raises(ValueError):
            StateSpaceModel(n=2, m=1, f=lambda x, u=None: x, g=lambda x: x, Q=np.eye(1), R=np.eye(1))

    def test_finite_difference_fallback(self):
        model = scalar_square_model(None)
        np.testing.assert_allclose(model.jac_g(np.array([1.5])), [[3.0]], rtol=1e-7)
        np.testing.assert_allclose(model.hess_g(np.array([1.5])), [[[2.0]]], rtol=1e-4)


class TestCsv:
    def test_trajectory_csv(self, tmp_path, wiener):
        tr = simulate(wiener, GaussianBelief(np.zeros(4), np.eye(4)), 5, seed=2)
        path = tmp_path / "tr.csv"
        tr.to_csv(path)
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["t", "x1", "x2", "x3", "x4", "y1", "y2"]
        assert len(rows) == 7
        assert float(rows[3][1]) == tr.states[2, 0]

    def test_measurement_csv_round_trip(self, tmp_path, wiener):
        tr = simulate(wiener, GaussianBelief(np.zeros(4), np.eye(4)), 8, seed=4)
        path = tmp_path / "y.csv"
        tr.measurements_to_csv(path)
        ys, us = read_measurements(path, 2)
        assert np.array_equal(ys, tr.measurements)
        assert us is None
