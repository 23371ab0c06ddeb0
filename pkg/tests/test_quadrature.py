from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import dims, random_spd, rel_err, seeds
from nanofilter.errors import NonFiniteFunctionValue
from nanofilter.gaussian import GaussianBelief
from nanofilter.quadrature import (
    DEFAULT_RULE,
    FifthDegreeRule,
    GaussHermiteRule,
    SigmaPointRule,
    expect_outer,
    expect_vector,
    expect_weighted_residuals,
    generate_sigma_points,
    weighted_residuals,
)
from nanofilter.selftest import gaussian_moment


def random_belief(rng, n):
    return GaussianBelief(rng.standard_normal(n), random_spd(rng, n))


def quadratic_oracle(a, b, c, belief):
    """Gaussian moments of ``0.5 x'Ax + b'x + c`` (Isserlis)."""
    mu, cov = belief.mean, belief.covariance
    s = 0.5 * np.trace(a @ cov) + 0.5 * mu @ a @ mu + b @ mu + c
    v = cov @ (a @ mu + b)
    m = s * cov + cov @ a @ cov
    return s, v, m


class TestSigmaPoints:
    def test_scalar_points_and_weights(self):
        sp = generate_sigma_points(GaussianBelief([0.0], [[1.0]]), SigmaPointRule(1.0, 2.0, 2.0))
        np.testing.assert_allclose(sp.points[:, 0], [0.0, np.sqrt(3.0), -np.sqrt(3.0)], atol=1e-15)
        np.testing.assert_allclose(sp.mean_weights, [2 / 3, 1 / 6, 1 / 6], atol=1e-15)

    def test_default_kappa_is_three_minus_n(self):
        assert DEFAULT_RULE.spread(4) == pytest.approx(3.0)

    def test_nonpositive_spread_rejected(self):
        with pytest.raises(ValueError):
            SigmaPointRule(kappa=-5.0).spread(2)

    @given(seeds, dims)
    def test_weighted_mean_and_scatter(self, seed, n):
        rng = np.random.default_rng(seed)
        belief = random_belief(rng, n)
        sp = generate_sigma_points(belief)
        assert rel_err(sp.mean_weights @ sp.points, belief.mean) <= 1e-12
        d = sp.points - belief.mean
        assert rel_err((d * sp.cov_weights[:, None]).T @ d, belief.covariance) <= 1e-10

    @pytest.mark.parametrize("rule", [DEFAULT_RULE, FifthDegreeRule()], ids=["ut", "fifth"])
    def test_standard_moments_degree_three(self, rule):
        for n in range(1, 6):
            z, wm, _ = rule.unit_points(n)
            for degree in range(4):
                for combo in itertools.combinations_with_replacement(range(n), degree):
                    powers = np.bincount(np.array(combo, dtype=int), minlength=n)
                    est = wm @ np.prod(z**powers, axis=1)
                    assert est == pytest.approx(gaussian_moment(powers), abs=1e-10)

    def test_fifth_degree_rule_matches_fourth_and_fifth_moments(self):
        for n in range(1, 6):
            z, wm, _ = FifthDegreeRule().unit_points(n)
            for degree in (4, 5):
                for combo in itertools.combinations_with_replacement(range(n), degree):
                    powers = np.bincount(np.array(combo, dtype=int), minlength=n)
                    est = wm @ np.prod(z**powers, axis=1)
                    assert est == pytest.approx(gaussian_moment(powers), abs=1e-10)

    def test_ut_misses_fourth_order_cross_moment(self):
        # E[z1^2 z2^2] = 1 but every UT node sits on an axis
        z, wm, _ = DEFAULT_RULE.unit_points(2)
        assert wm @ (z[:, 0] ** 2 * z[:, 1] ** 2) == pytest.approx(0.0)


class TestExpectVector:
    def test_identity(self, rng):
        b = random_belief(rng, 3)
        assert rel_err(expect_vector(lambda x: x, b), b.mean) <= 1e-12

    def test_affine(self, rng):
        b = random_belief(rng, 4)
        a, c = rng.standard_normal((2, 4)), rng.standard_normal(2)
        assert rel_err(expect_vector(lambda x: x @ a.T + c, b), a @ b.mean + c) <= 1e-12

    def test_sin_against_monte_carlo(self, mc_sin):
        b = GaussianBelief([0.0], [[0.25]])
        est = expect_vector(np.sin, b)[0]
        mean, se = mc_sin
        assert abs(est - mean) <= 3.0 * se

    def test_non_finite_raises(self):
        with pytest.raises(NonFiniteFunctionValue), np.errstate(invalid="ignore"):
            expect_vector(np.log, GaussianBelief([0.1], [[1.0]]))

    @given(seeds, dims, st.integers(0, 3))
    def test_products_of_linear_forms(self, seed, n, degree):
        # E[prod (alpha_i + beta_i' d)] for d ~ N(0, cov), up to degree three
        rng = np.random.default_rng(seed)
        belief = random_belief(rng, n)
        mu, cov = belief.mean, belief.covariance
        coef = rng.standard_normal((degree, n))
        f = lambda x: np.prod(x @ coef.T, axis=-1, keepdims=True)  # noqa: E731
        alpha, beta = coef @ mu, coef
        pairs = lambda i, j: beta[i] @ cov @ beta[j]  # noqa: E731
        if degree == 0:
            oracle = 1.0
        elif degree == 1:
            oracle = alpha[0]
        elif degree == 2:
            oracle = alpha[0] * alpha[1] + pairs(0, 1)
        else:
            oracle = (
                alpha.prod()
                + alpha[0] * pairs(1, 2)
                + alpha[1] * pairs(0, 2)
                + alpha[2] * pairs(0, 1)
            )
        scale = max(1.0, float(np.prod(np.abs(alpha) + np.sqrt(np.diag(beta @ cov @ beta.T))))) if degree else 1.0
        assert abs(expect_vector(f, belief)[0] - oracle) <= 1e-10 * scale


class TestExpectOuter:
    def test_second_moment_zero_mean(self, rng):
        b = GaussianBelief(np.zeros(3), random_spd(rng, 3))
        assert rel_err(expect_outer(lambda x: x, None, b), b.covariance) <= 1e-12

    def test_affine_closed_form(self, rng):
        b = random_belief(rng, 3)
        a, c = rng.standard_normal((2, 3)), rng.standard_normal(2)
        mean = a @ b.mean + c
        oracle = a @ b.covariance @ a.T + np.outer(mean, mean)
        f = lambda x: x @ a.T + c  # noqa: E731
        assert rel_err(expect_outer(f, f, b), oracle) <= 1e-12

    def test_cubic_outside_exactness(self):
        est = expect_outer(lambda x: x**3, None, GaussianBelief([0.0], [[1.0]]))[0, 0]
        assert est == pytest.approx(9.0)
        assert abs(est - 15.0) > 1.0


class TestWeightedResiduals:
    def test_constant(self, rng):
        b = random_belief(rng, 3)
        s, v, m = expect_weighted_residuals(lambda x: np.full(len(x), 2.5), b)
        assert s == pytest.approx(2.5)
        assert np.abs(v).max() <= 1e-12
        assert rel_err(m, 2.5 * b.covariance) <= 1e-12

    def test_linear_scalar(self):
        s, v, m = expect_weighted_residuals(lambda x: x[:, 0], GaussianBelief([0.0], [[1.0]]))
        assert s == pytest.approx(0.0, abs=1e-15)
        assert v[0] == pytest.approx(1.0)
        assert m[0, 0] == pytest.approx(0.0, abs=1e-15)

    @given(seeds, st.integers(1, 4))
    def test_quadratic_fifth_degree_rule(self, seed, n):
        rng = np.random.default_rng(seed)
        b = random_belief(rng, n)
        a, lin, c = random_spd(rng, n), rng.standard_normal(n), rng.standard_normal()
        loss = lambda x: 0.5 * np.einsum("ki,ij,kj->k", x, a, x) + x @ lin + c  # noqa: E731
        got = expect_weighted_residuals(loss, b, FifthDegreeRule())
        for g, o in zip(got, quadratic_oracle(a, lin, c, b)):
            assert rel_err(g, o) <= 1e-10

    def test_quadratic_ut_scalar_exact(self, rng):
        b = random_belief(rng, 1)
        a, lin, c = np.array([[1.7]]), np.array([-0.3]), 0.4
        loss = lambda x: 0.5 * a[0, 0] * x[:, 0] ** 2 + lin[0] * x[:, 0] + c  # noqa: E731
        got = expect_weighted_residuals(loss, b)
        for g, o in zip(got, quadratic_oracle(a, lin, c, b)):
            assert rel_err(g, o) <= 1e-10

    def test_quadratic_ut_second_moment_inexact_in_two_dims(self, rng):
        # the residual-weighted second moment needs fourth-order cross moments
        b = GaussianBelief(np.zeros(2), np.eye(2))
        a = np.array([[1.0, 0.0], [0.0, 1.0]])
        loss = lambda x: 0.5 * np.sum(x * x, axis=1)  # noqa: E731
        s, v, m = expect_weighted_residuals(loss, b)
        s_o, v_o, m_o = quadratic_oracle(a, np.zeros(2), 0.0, b)
        assert s == pytest.approx(s_o)
        assert np.abs(v - v_o).max() <= 1e-12
        assert np.abs(m - m_o).max() > 0.1

    @given(seeds, dims)
    def test_permutation_invariance(self, seed, n):
        rng = np.random.default_rng(seed)
        b = random_belief(rng, n)
        sp = generate_sigma_points(b)
        values = np.cos(sp.points).sum(axis=1)
        perm = rng.permutation(len(values))
        ref = weighted_residuals(sp.points, sp.mean_weights, b.mean, values)
        got = weighted_residuals(sp.points[perm], sp.mean_weights[perm], b.mean, values[perm])
        for g, r in zip(got, ref):
            assert rel_err(g, r) <= 1e-12

    @given(seeds, dims)
    def test_affine_commutes(self, seed, n):
        rng = np.random.default_rng(seed)
        b = random_belief(rng, n)
        a, c = rng.standard_normal((3, n)), rng.standard_normal(3)
        assert rel_err(expect_vector(lambda x: x @ a.T + c, b), a @ b.mean + c) <= 1e-10


class TestGaussHermite:
    def test_order_validated(self):
        with pytest.raises(ValueError):
            GaussHermiteRule(0)

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_node_count_and_weights(self, n):
        z, wm, wc = GaussHermiteRule(4).unit_points(n)
        assert z.shape == (4**n, n)
        assert wm.sum() == pytest.approx(1.0, abs=1e-14)
        assert np.all(wm > 0)
        assert wc is wm

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_moments_per_axis_degree(self, n):
        # order k integrates each coordinate exactly up to degree 2k - 1
        z, w, _ = GaussHermiteRule(3).unit_points(n)
        for powers in itertools.product(range(6), repeat=n):
            est = float(w @ np.prod(z**np.array(powers), axis=1))
            assert est == pytest.approx(gaussian_moment(powers), abs=1e-11)

    def test_sine_against_closed_form(self):
        # E[sin(x)] = sin(mu) exp(-var / 2)
        belief = GaussianBelief(np.array([0.4]), np.array([[0.09]]))
        est = expect_vector(lambda x: np.sin(x[:, 0]), belief, GaussHermiteRule(20))
        assert est == pytest.approx(np.sin(0.4) * np.exp(-0.045), abs=1e-14)
