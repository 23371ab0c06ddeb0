"""Gaussian beliefs and the SPD matrix algebra the filters are built on.

Covariances are the canonical representation. Precision matrices only show
up transiently inside the natural-gradient update and are always applied
through Cholesky solves, never through an explicit inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg.lapack import dpotrf, dpotri, dpotrs, dtrtrs

from .errors import DimensionMismatch, NotPositiveDefinite, RegularizationFailed

MAX_JITTER_ESCALATIONS = 8
JITTER_SEED_SCALE = 1e-9


@dataclass(frozen=True)
class GaussianBelief:
    """Mean vector and covariance matrix of a Gaussian state estimate."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.covariance, dtype=float)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)
        if cov.shape != (mean.size, mean.size):
            raise DimensionMismatch(
                f"mean has length {mean.size} but covariance is {cov.shape}"
            )
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def validate(self, rtol: float = 1e-12) -> None:
        """Raise if the covariance is asymmetric or fails Cholesky."""
        cov = self.covariance
        scale = max(np.abs(cov).max(), 1e-300)
        if np.abs(cov - cov.T).max() > rtol * scale:
            raise NotPositiveDefinite("covariance is not symmetric")
        cholesky_spd(cov)


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def cholesky_spd(m: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of an SPD matrix.

    Raises:
        NotPositiveDefinite: if any pivot is non-positive or the input is
            not finite.
    """
    # LAPACK directly: the numpy/scipy front-ends cost more than the
    # factorization itself at filter sizes
    lower, info = dpotrf(np.asarray(m, dtype=float), lower=1, clean=1)
    # a NaN anywhere in the lower triangle propagates to a later pivot
    if info != 0 or not np.diagonal(lower).min() > 0.0:
        raise NotPositiveDefinite("non-finite or non-positive Cholesky pivot")
    return lower


def regularized_cholesky(
    m: np.ndarray, jitter: float | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Like :func:`regularize_spd` but also returns the Cholesky factor."""
    m = symmetrize(np.asarray(m, dtype=float))
    if jitter == 0:
        try:
            return m, cholesky_spd(m)
        except NotPositiveDefinite:
            pass
    n = m.shape[0]
    seed = JITTER_SEED_SCALE * abs(np.trace(m)) / n
    if seed == 0.0:
        seed = JITTER_SEED_SCALE
    first = seed if jitter is None else float(jitter)
    if first < 0:
        raise ValueError("jitter must be nonnegative")
    # a zero starting jitter escalates from the scale-aware seed
    base = first if first > 0 else seed / 10.0
    amounts = [first] + [base * 10.0**k for k in range(1, MAX_JITTER_ESCALATIONS + 1)]
    eye = np.eye(n)
    for amount in amounts:
        candidate = m + amount * eye if amount else m
        try:
            return candidate, cholesky_spd(candidate)
        except NotPositiveDefinite:
            continue
    raise RegularizationFailed(
        f"matrix not SPD after {MAX_JITTER_ESCALATIONS} jitter escalations "
        f"(final jitter {amounts[-1]:.3e})"
    )


def regularize_spd(m: np.ndarray, jitter: float | None = None) -> np.ndarray:
    """Symmetrize ``m`` and add escalating diagonal jitter until it is SPD.

    ``jitter`` is the first amount tried; ``None`` means a scale-aware seed of
    ``1e-9 * trace(m) / n``. Each failure multiplies the jitter by ten.

    Raises:
        RegularizationFailed: after eight escalations.
    """
    return regularized_cholesky(m, jitter)[0]


def solve_spd(m: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``m @ x = b`` for SPD ``m`` through its Cholesky factor."""
    lower = cholesky_spd(m)
    return cho_solve_lower(lower, b)


def cho_solve_lower(lower: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``(L L^T) x = b`` given the lower factor ``L``."""
    x, _ = dpotrs(lower, b, lower=1)
    return x


def solve_lower(lower: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``L x = b`` for lower-triangular ``L``."""
    x, _ = dtrtrs(lower, b, lower=1)
    return x


def inverse_from_cholesky(lower: np.ndarray) -> np.ndarray:
    """``(L L^T)^{-1}`` as a full symmetric matrix."""
    inv, _ = dpotri(lower, lower=1)
    low = np.tril(inv)
    return low + np.tril(inv, -1).T


def inverse_spd(m: np.ndarray) -> np.ndarray:
    """Inverse of an SPD matrix via Cholesky, exactly symmetric."""
    return inverse_from_cholesky(cholesky_spd(m))


def logdet_from_cholesky(lower: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diagonal(lower))))


def kl_gauss(p: GaussianBelief, q: GaussianBelief) -> float:
    """KL(p || q) between two Gaussians, clamped at zero."""
    if p.dim != q.dim:
        raise DimensionMismatch(f"dimensions {p.dim} and {q.dim} differ")
    lp = cholesky_spd(p.covariance)
    lq = cholesky_spd(q.covariance)
    diff = solve_lower(lq, q.mean - p.mean)
    # Tr(Sq^-1 Sp) = ||Lq^-1 Lp||_F^2
    a = solve_lower(lq, lp)
    value = 0.5 * (
        diff @ diff
        + np.sum(a * a)
        - logdet_from_cholesky(lp)
        + logdet_from_cholesky(lq)
        - p.dim
    )
    return max(float(value), 0.0)


def kl_to_precision(
    mean_p: np.ndarray,
    cov_p: np.ndarray,
    lower_p: np.ndarray,
    mean_q: np.ndarray,
    prec_q: np.ndarray,
    lower_prec_q: np.ndarray,
) -> float:
    """KL(p || q) with ``q`` given in precision form (factor of the precision)."""
    d = mean_q - mean_p
    value = 0.5 * (
        d @ prec_q @ d
        + np.sum(prec_q * cov_p)
        - logdet_from_cholesky(lower_p)
        - logdet_from_cholesky(lower_prec_q)
        - mean_p.size
    )
    return max(float(value), 0.0)
