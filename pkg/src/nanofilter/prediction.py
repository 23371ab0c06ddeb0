"""Moment-matching prediction shared by the sigma-point filters."""

from __future__ import annotations

import numpy as np

from .gaussian import GaussianBelief, regularize_spd
from .quadrature import DEFAULT_RULE, check_finite, sigma_points


def predict_arrays(mean, cov, model, rule=DEFAULT_RULE, u=None):
    pts, wm, _ = sigma_points(mean, cov, rule)
    fx = check_finite(np.asarray(model.f(pts, u), dtype=float), "transition")
    new_mean = wm @ fx
    d = fx - new_mean
    # E[f f^T] - mean mean^T, evaluated in centered form
    new_cov = (d * wm[:, None]).T @ d + model.Q
    return new_mean, regularize_spd(new_cov, jitter=0.0)


def predict(belief: GaussianBelief, model, rule=DEFAULT_RULE, u=None) -> GaussianBelief:
    """Gaussian prior at the next step by matching the first two moments.

    Raises:
        NonFiniteFunctionValue: if the transition blows up at a sigma point.
        RegularizationFailed: if the predicted covariance cannot be made SPD.
    """
    return GaussianBelief(*predict_arrays(belief.mean, belief.covariance, model, rule, u))
