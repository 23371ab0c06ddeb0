"""Deterministic sigma-point approximations of Gaussian expectations.

All callables passed to the ``expect_*`` helpers are evaluated on the whole
point set at once: they receive an ``(N, n)`` array and must return an array
with leading dimension ``N``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .errors import NonFiniteFunctionValue
from .gaussian import GaussianBelief, cholesky_spd


@dataclass(frozen=True)
class SigmaPointRule:
    """Scaled unscented transform parameters.

    ``kappa=None`` selects the classical ``3 - n`` choice, which matches the
    fourth moment of a scalar Gaussian.
    """

    alpha: float = 1.0
    beta: float = 2.0
    kappa: float | None = None

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    def spread(self, n: int) -> float:
        """``n + lambda``; the squared radius of the non-central points."""
        kappa = 3.0 - n if self.kappa is None else self.kappa
        value = self.alpha**2 * (n + kappa)
        if value <= 0:
            raise ValueError(f"UT parameters give n + lambda = {value} <= 0 for n={n}")
        return value

    def unit_points(self, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Standardized nodes ``z`` (for N(0, I)) with mean and cov weights."""
        return _ut_unit(n, self.alpha, self.beta, self.kappa)


@lru_cache(maxsize=64)
def _ut_unit(n, alpha, beta, kappa):
    rule = SigmaPointRule(alpha, beta, kappa)
    c = rule.spread(n)
    lam = c - n
    z = np.zeros((2 * n + 1, n))
    z[1 : n + 1] = np.sqrt(c) * np.eye(n)
    z[n + 1 :] = -np.sqrt(c) * np.eye(n)
    wm = np.full(2 * n + 1, 1.0 / (2.0 * c))
    wm[0] = lam / c
    wc = wm.copy()
    wc[0] = wm[0] + 1.0 - alpha**2 + beta
    for a in (z, wm, wc):
        a.setflags(write=False)
    return z, wm, wc


@dataclass(frozen=True)
class FifthDegreeRule:
    """Fully symmetric rule exact for Gaussian moments up to degree five.

    Uses ``2n^2 + 1`` nodes: the origin, ``+-sqrt(3) e_i`` and
    ``sqrt(3) (+-e_i +- e_j)``. Same contract as :class:`SigmaPointRule`;
    needed wherever fourth-order cross moments must be exact.
    """

    def unit_points(self, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return _fifth_unit(n)


@lru_cache(maxsize=64)
def _fifth_unit(n):
    r = np.sqrt(3.0)
    eye = np.eye(n)
    nodes = [np.zeros(n)]
    weights = [1.0 + (n * n - 7.0 * n) / 18.0]
    for i in range(n):
        nodes += [r * eye[i], -r * eye[i]]
        weights += [(4.0 - n) / 18.0] * 2
    for i in range(n):
        for j in range(i + 1, n):
            for si in (1.0, -1.0):
                for sj in (1.0, -1.0):
                    nodes.append(r * (si * eye[i] + sj * eye[j]))
                    weights.append(1.0 / 36.0)
    z = np.array(nodes)
    w = np.array(weights)
    z.setflags(write=False)
    w.setflags(write=False)
    return z, w, w


@dataclass(frozen=True)
class GaussHermiteRule:
    """Tensor-product Gauss-Hermite rule with ``order`` nodes per axis.

    Exact for polynomials of degree ``2 * order - 1`` in each coordinate,
    at a cost of ``order ** n`` nodes. Meant for low dimensions and for
    reference computations.
    """

    order: int = 10

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("order must be >= 1")

    def unit_points(self, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return _hermite_unit(n, self.order)


@lru_cache(maxsize=64)
def _hermite_unit(n, order):
    nodes, weights = hermegauss(order)
    weights = weights / weights.sum()
    grids = np.meshgrid(*([nodes] * n), indexing="ij")
    z = np.stack([g.ravel() for g in grids], axis=-1)
    wgrids = np.meshgrid(*([weights] * n), indexing="ij")
    w = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
    z.setflags(write=False)
    w.setflags(write=False)
    return z, w, w


DEFAULT_RULE = SigmaPointRule()


@dataclass(frozen=True)
class SigmaPointSet:
    points: np.ndarray
    mean_weights: np.ndarray
    cov_weights: np.ndarray


def sigma_points(mean: np.ndarray, cov: np.ndarray, rule=DEFAULT_RULE, lower=None):
    """Array-level sigma points: ``(points, mean_weights, cov_weights)``.

    ``lower`` may pass a precomputed Cholesky factor of ``cov``.
    """
    if lower is None:
        lower = cholesky_spd(cov)
    z, wm, wc = rule.unit_points(mean.size)
    return mean + z @ lower.T, wm, wc


def generate_sigma_points(belief: GaussianBelief, rule=DEFAULT_RULE) -> SigmaPointSet:
    pts, wm, wc = sigma_points(belief.mean, belief.covariance, rule)
    return SigmaPointSet(pts, wm, wc)


def check_finite(values: np.ndarray, what: str = "function") -> np.ndarray:
    # NaN and inf both survive summation, and the sum is cheaper than isfinite
    if not np.isfinite(np.sum(values)):
        raise NonFiniteFunctionValue(f"{what} returned a non-finite value at a sigma point")
    return values


def expect_vector(f, belief: GaussianBelief, rule=DEFAULT_RULE) -> np.ndarray:
    """Sigma-point estimate of ``E[f(x)]`` under ``belief``."""
    pts, wm, _ = sigma_points(belief.mean, belief.covariance, rule)
    values = check_finite(np.asarray(f(pts), dtype=float))
    return np.tensordot(wm, values, axes=1)


def expect_outer(f, g, belief: GaussianBelief, rule=DEFAULT_RULE) -> np.ndarray:
    """Sigma-point estimate of ``E[f(x) g(x)^T]``; ``g`` defaults to ``f``."""
    pts, wm, _ = sigma_points(belief.mean, belief.covariance, rule)
    fv = check_finite(np.asarray(f(pts), dtype=float).reshape(len(pts), -1))
    gv = fv if g is None else check_finite(np.asarray(g(pts), dtype=float).reshape(len(pts), -1))
    return (fv * wm[:, None]).T @ gv


def weighted_residuals(points, wm, mean, values):
    """``(s, v, M)`` from loss values already evaluated at ``points``."""
    d = points - mean
    wl = wm * values
    s = float(wl.sum())
    v = wl @ d
    m = (d * wl[:, None]).T @ d
    return s, v, 0.5 * (m + m.T)


def expect_weighted_residuals(loss, belief: GaussianBelief, rule=DEFAULT_RULE):
    """One sweep giving ``E[l]``, ``E[(x-mu) l]`` and ``E[(x-mu)(x-mu)^T l]``."""
    pts, wm, _ = sigma_points(belief.mean, belief.covariance, rule)
    values = check_finite(np.asarray(loss(pts), dtype=float).reshape(len(pts)), "loss")
    return weighted_residuals(pts, wm, belief.mean, values)
