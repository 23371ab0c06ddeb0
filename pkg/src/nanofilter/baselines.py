"""Reference Gaussian filters: KF, EKF, UKF, IEKF and PLF.

Each ``*_step`` takes the posterior at ``t-1``, predicts, and updates with
``y_t``. Filter state lives with the caller; the functions are pure.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from .gaussian import (
    GaussianBelief,
    cho_solve_lower,
    cholesky_spd,
    kl_gauss,
    regularized_cholesky,
    symmetrize,
)
from .prediction import predict_arrays
from .quadrature import DEFAULT_RULE, check_finite, sigma_points

DEFAULT_MAX_ITERS = 20
DEFAULT_MEAN_TOL = 1e-8
DEFAULT_KL_TOL = 1e-6


@dataclass(frozen=True)
class FilterStepResult:
    posterior: GaussianBelief
    iterations: int
    wall_time: float
    trace: Optional[Any] = None


def kalman_update(mean, cov, C, noise_cov, innovation):
    """Affine-Gaussian update in Joseph form.

    ``innovation`` is ``y - (C mean + b)`` computed by the caller so angle
    wrapping stays with the model.
    """
    pct = cov @ C.T
    s = C @ pct + noise_cov
    _, ls = regularized_cholesky(s, jitter=0.0)
    gain = cho_solve_lower(ls, pct.T).T
    new_mean = mean + gain @ innovation
    ikc = np.eye(mean.size) - gain @ C
    new_cov = ikc @ cov @ ikc.T + gain @ noise_cov @ gain.T
    return new_mean, symmetrize(new_cov)


def kf_step(belief: GaussianBelief, model, y, u=None) -> FilterStepResult:
    """Exact Kalman filter step for a model with ``A`` and ``C`` set."""
    if not model.is_affine:
        raise ValueError("kf_step needs an affine model with A and C")
    start = time.perf_counter()
    a, c = model.A, model.C
    mean = a @ belief.mean
    cov = symmetrize(a @ belief.covariance @ a.T + model.Q)
    mean, cov = kalman_update(mean, cov, c, model.R, model.residual(y, c @ mean))
    return FilterStepResult(GaussianBelief(mean, cov), 1, time.perf_counter() - start)


def ekf_predict(mean, cov, model, u=None):
    f = model.jac_f(mean, u)
    return np.asarray(model.f(mean, u), dtype=float), symmetrize(f @ cov @ f.T + model.Q)


def ekf_step(belief: GaussianBelief, model, y, u=None) -> FilterStepResult:
    """Extended Kalman filter: first-order Taylor linearization of f and g."""
    start = time.perf_counter()
    mean, cov = ekf_predict(belief.mean, belief.covariance, model, u)
    g = model.jac_g(mean)
    innovation = model.residual(y, model.g(mean))
    mean, cov = kalman_update(mean, cov, g, model.R, innovation)
    return FilterStepResult(GaussianBelief(mean, cov), 1, time.perf_counter() - start)


def slr(mean, cov, model, rule=DEFAULT_RULE):
    """Statistical linear regression of ``g`` under ``N(mean, cov)``.

    Returns ``(A, b, Omega)`` with ``g(x) ~ A x + b`` and residual
    covariance ``Omega``.
    """
    lower = cholesky_spd(cov)
    pts, wm, _ = sigma_points(mean, cov, rule, lower=lower)
    gy = check_finite(np.asarray(model.g(pts), dtype=float), "measurement")
    y_bar = wm @ gy
    dy = model.residual(gy, y_bar)
    dx = pts - mean
    psi = (dx * wm[:, None]).T @ dy
    phi = (dy * wm[:, None]).T @ dy
    a = cho_solve_lower(lower, psi).T
    b = y_bar - a @ mean
    omega = symmetrize(phi - a @ cov @ a.T)
    return a, b, omega


def ukf_step(belief: GaussianBelief, model, y, rule=DEFAULT_RULE, u=None) -> FilterStepResult:
    """Unscented Kalman filter with cross-covariance gain at the prior."""
    start = time.perf_counter()
    mean, cov = predict_arrays(belief.mean, belief.covariance, model, rule, u)
    pts, wm, _ = sigma_points(mean, cov, rule)
    gy = check_finite(np.asarray(model.g(pts), dtype=float), "measurement")
    y_bar = wm @ gy
    dy = model.residual(gy, y_bar)
    dx = pts - mean
    cross = (dx * wm[:, None]).T @ dy
    s = (dy * wm[:, None]).T @ dy + model.R
    _, ls = regularized_cholesky(s, jitter=0.0)
    gain = cho_solve_lower(ls, cross.T).T
    mean = mean + gain @ model.residual(y, y_bar)
    cov = symmetrize(cov - gain @ s @ gain.T)
    _, lc = regularized_cholesky(cov, jitter=0.0)
    return FilterStepResult(GaussianBelief(mean, lc @ lc.T), 1, time.perf_counter() - start)


def iekf_step(
    belief: GaussianBelief,
    model,
    y,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_MEAN_TOL,
    u=None,
) -> FilterStepResult:
    """Iterated EKF: Gauss-Newton relinearization of g at the mean iterate.

    Stops when the mean moves less than ``tol * (1 + |x|)``; the covariance
    comes from the final linearization point. An affine measurement map
    needs a single linearization.
    """
    start = time.perf_counter()
    prior_mean, prior_cov = ekf_predict(belief.mean, belief.covariance, model, u)
    if model.C is not None:
        max_iters = 1
    x = prior_mean
    iters = 0
    for iters in range(1, max_iters + 1):
        g = model.jac_g(x)
        innovation = model.residual(y, model.g(x) + g @ (prior_mean - x))
        new_x, cov = kalman_update(prior_mean, prior_cov, g, model.R, innovation)
        step = np.linalg.norm(new_x - x)
        x = new_x
        if step < tol * (1.0 + np.linalg.norm(x)):
            break
    g = model.jac_g(x)
    _, cov = kalman_update(prior_mean, prior_cov, g, model.R, np.zeros(model.m))
    return FilterStepResult(GaussianBelief(x, cov), iters, time.perf_counter() - start)


def plf_step(
    belief: GaussianBelief,
    model,
    y,
    rule=DEFAULT_RULE,
    max_iters: int = DEFAULT_MAX_ITERS,
    kl_tol: float = DEFAULT_KL_TOL,
    u=None,
) -> FilterStepResult:
    """Posterior linearization filter.

    Repeats SLR of ``g`` at the current posterior iterate and a Kalman update
    from the original prior, until KL(previous || current) < ``kl_tol``.
    SLR of an affine map is exact, so then one iteration is final.
    """
    start = time.perf_counter()
    prior_mean, prior_cov = predict_arrays(belief.mean, belief.covariance, model, rule, u)
    if model.C is not None:
        max_iters = 1
    mean, cov = prior_mean, prior_cov
    iters = 0
    for iters in range(1, max_iters + 1):
        a, b, omega = slr(mean, cov, model, rule)
        innovation = model.residual(y, a @ prior_mean + b)
        new_mean, new_cov = kalman_update(prior_mean, prior_cov, a, model.R + omega, innovation)
        _, lc = regularized_cholesky(new_cov, jitter=0.0)
        new_cov = lc @ lc.T
        kl = kl_gauss(GaussianBelief(mean, cov), GaussianBelief(new_mean, new_cov))
        mean, cov = new_mean, new_cov
        if kl < kl_tol:
            break
    return FilterStepResult(GaussianBelief(mean, cov), iters, time.perf_counter() - start)
