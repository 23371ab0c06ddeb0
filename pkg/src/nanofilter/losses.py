"""Measurement-dependent losses ``l(x, y)`` and their state derivatives.

Every loss here is a function ``rho(e)`` of the whitened residual
``e = L^{-1} (y - g(x))`` with ``R = L L^T``. With ``J = dg/dx`` and ``H_k``
the Hessian of output ``k``, the chain rule gives

    grad = -(W J)^T psi
    hess = (W J)^T Phi (W J) - sum_k (psi^T W)_k H_k

where ``psi``/``Phi`` are the gradient/Hessian of ``rho`` in ``e`` and
``W = L^{-1}``. All methods are vectorized over leading axes of ``x``.

Additive constants: the Gaussian negative log-likelihood drops
``log((2 pi)^m |R|) / 2`` (and so does the weighted loss built on it); the
beta loss keeps its integral term. Neither choice affects the derivatives,
which are all the update consumes.
"""

from __future__ import annotations

import numpy as np

from .errors import NotPositiveDefinite
from .gaussian import cholesky_spd, solve_lower


class Loss:
    """Interface used by the filters: ``value`` and ``derivatives`` in ``x``."""

    kind = "custom"

    def value(self, x, y):
        raise NotImplementedError

    def derivatives(self, x, y):
        """Return ``(value, gradient, hessian)`` with shapes ``(...,)``,
        ``(..., n)``, ``(..., n, n)``."""
        raise NotImplementedError


class MeasurementLoss(Loss):
    """Loss bound to a model's measurement map and noise covariance."""

    def __init__(self, model):
        self.model = model
        try:
            self._chol_r = cholesky_spd(model.R)
        except NotPositiveDefinite:
            raise NotPositiveDefinite("measurement covariance R is not SPD") from None
        self._whiten = solve_lower(self._chol_r, np.eye(model.m))
        self._logdet_r = 2.0 * float(np.sum(np.log(np.diagonal(self._chol_r))))
        self._linear_g = model.C is not None

    def whitened_residual(self, x, y):
        r = self.model.residual(y, self.model.g(x))
        return r @ self._whiten.T

    def rho(self, e):
        """``(value, psi, phi)`` of the residual loss; ``phi`` may be ``None``."""
        raise NotImplementedError

    def value(self, x, y):
        return self.rho(self.whitened_residual(x, y), need_derivs=False)[0]

    def _value_grad_curvature(self, e, wj):
        """``(value, psi, (W J)^T Phi (W J))`` for whitened residuals ``e``."""
        val, psi, phi = self.rho(e, need_derivs=True)
        return val, psi, np.swapaxes(wj, -1, -2) @ phi @ wj

    def derivatives(self, x, y):
        x = np.asarray(x, dtype=float)
        e = self.whitened_residual(x, y)
        wj = self._whiten @ self.model.jac_g(x)
        val, psi, hess = self._value_grad_curvature(e, wj)
        grad = -(psi[..., None, :] @ wj)[..., 0, :]
        if not self._linear_g:
            coef = psi @ self._whiten
            hess = hess - np.einsum("...k,...kij->...ij", coef, self.model.hess_g(x))
        hess = 0.5 * (hess + np.swapaxes(hess, -1, -2))
        return val, grad, hess

    def __call__(self, x, y):
        return self.value(x, y)


class _RadialLoss(MeasurementLoss):
    """Losses that depend on ``e`` only through ``q = ||e||^2``."""

    def rho_q(self, q):
        """``(rho(q), rho'(q), rho''(q))``."""
        raise NotImplementedError

    def rho(self, e, need_derivs=True):
        q = np.sum(e * e, axis=-1)
        val, d1, d2 = self.rho_q(q)
        if not need_derivs:
            return val, None, None
        psi = 2.0 * d1[..., None] * e
        m = e.shape[-1]
        phi = 2.0 * d1[..., None, None] * np.eye(m) + 4.0 * d2[..., None, None] * (
            e[..., :, None] * e[..., None, :]
        )
        return val, psi, phi

    def _value_grad_curvature(self, e, wj):
        # Phi = 2 rho' I + 4 rho'' e e^T, applied without forming it
        q = np.sum(e * e, axis=-1)
        val, d1, d2 = self.rho_q(q)
        psi = 2.0 * d1[..., None] * e
        wjt = np.swapaxes(wj, -1, -2)
        proj = (e[..., None, :] @ wj)[..., 0, :]
        curv = 2.0 * d1[..., None, None] * (wjt @ wj)
        curv = curv + 4.0 * d2[..., None, None] * (proj[..., :, None] * proj[..., None, :])
        return val, psi, curv


class GaussianNLL(_RadialLoss):
    """``0.5 (y - g(x))^T R^{-1} (y - g(x))``."""

    kind = "gaussian"

    def rho_q(self, q):
        return 0.5 * q, np.full_like(q, 0.5), np.zeros_like(q)


class PseudoHuber(MeasurementLoss):
    """Sum over whitened channels of ``delta^2 (sqrt(1 + e^2/delta^2) - 1)``."""

    kind = "huber"

    def __init__(self, model, delta: float):
        if delta <= 0:
            raise ValueError("delta must be positive")
        super().__init__(model)
        self.delta = float(delta)

    def rho(self, e, need_derivs=True):
        d2 = self.delta**2
        u = 1.0 + e * e / d2
        root = np.sqrt(u)
        # d2*(root-1) written to avoid cancellation for small residuals
        val = np.sum(e * e / (root + 1.0), axis=-1)
        if not need_derivs:
            return val, None, None
        psi = e / root
        curv = 1.0 / (u * root)
        phi = curv[..., :, None] * np.eye(e.shape[-1])
        return val, psi, phi


class WeightedNLL(_RadialLoss):
    """Gaussian NLL scaled by the inverse multi-quadratic weight.

    ``w = (1 + q / c^2)^{-1}`` with ``q`` the squared Mahalanobis residual,
    so the loss is ``0.5 q c^2 / (c^2 + q)``, bounded above by ``c^2 / 2``.
    """

    kind = "weight"

    def __init__(self, model, c: float):
        if c <= 0:
            raise ValueError("c must be positive")
        super().__init__(model)
        self.c = float(c)

    def weight(self, x, y):
        e = self.whitened_residual(x, y)
        return 1.0 / (1.0 + np.sum(e * e, axis=-1) / self.c**2)

    def rho_q(self, q):
        c2 = self.c**2
        s = c2 + q
        return 0.5 * q * c2 / s, 0.5 * c2 * c2 / s**2, -c2 * c2 / s**3


class BetaLoss(_RadialLoss):
    """Density-power loss ``-(b+1)/b N(y; g, R)^b + int N(y'; g, R)^(b+1) dy'``."""

    kind = "beta"

    def __init__(self, model, beta: float):
        if beta <= 0:
            raise ValueError("beta must be positive")
        super().__init__(model)
        self.beta = float(beta)
        m = model.m
        # N^b = kappa * exp(-b q / 2)
        self._kappa = np.exp(-0.5 * self.beta * (m * np.log(2.0 * np.pi) + self._logdet_r))
        self.integral_term = (self.beta + 1.0) ** (-0.5 * m) * self._kappa

    def rho_q(self, q):
        b = self.beta
        dens = self._kappa * np.exp(-0.5 * b * q)
        val = -(b + 1.0) / b * dens + self.integral_term
        return val, 0.5 * (b + 1.0) * dens, -0.25 * b * (b + 1.0) * dens


LOSS_KINDS = {
    "gaussian": (GaussianNLL, ()),
    "huber": (PseudoHuber, ("delta",)),
    "weight": (WeightedNLL, ("c",)),
    "beta": (BetaLoss, ("beta",)),
}


def make_loss(kind: str, model, **params) -> MeasurementLoss:
    """Build a loss from its configuration id and parameters."""
    try:
        cls, names = LOSS_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown loss kind {kind!r}; expected one of {sorted(LOSS_KINDS)}") from None
    extra = set(params) - set(names)
    missing = set(names) - set(params)
    if extra or missing:
        raise ValueError(f"loss {kind!r} takes parameters {names}, got {sorted(params)}")
    return cls(model, **params)


def gaussian_nll(x, y, model):
    return GaussianNLL(model).value(x, y)


def pseudo_huber(x, y, model, delta):
    return PseudoHuber(model, delta).value(x, y)


def weighted_nll(x, y, model, c):
    return WeightedNLL(model, c).value(x, y)


def beta_loss(x, y, model, beta):
    return BetaLoss(model, beta).value(x, y)
