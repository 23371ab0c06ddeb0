"""NANO filter: natural-gradient Gaussian approximation for the update step.

The prediction is moment matching. The update minimizes

    J(m, P) = E_{N(m, P)}[l(x, y)] + KL(N(m, P) || prior)

by natural-gradient steps on the Gaussian manifold, started from a Laplace
approximation at the MAP point. Each step sets

    precision' = prior_precision + E[d2l/dx2]
    mean'      = mean - precision'^{-1} (E[dl/dx] + prior_precision (mean - prior_mean))

with expectations under the current iterate. In derivative-free mode the
two expectations come from Stein's identities

    E[dl/dx]   = precision E[(x - m) l]
    E[d2l/dx2] = precision E[(x - m)(x - m)^T l] precision - precision E[l]

so only loss values are needed.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .baselines import FilterStepResult
from .errors import MapDivergence, NotPositiveDefinite, RegularizationFailed, StepFailure
from .gaussian import (
    GaussianBelief,
    cho_solve_lower,
    cholesky_spd,
    inverse_from_cholesky,
    kl_to_precision,
    regularized_cholesky,
    symmetrize,
)
from .prediction import predict, predict_arrays
from .quadrature import DEFAULT_RULE, check_finite, sigma_points, weighted_residuals

STEIN = "stein_derivative_free"
ANALYTIC = "analytic_derivatives"
DERIVATIVE_MODES = (STEIN, ANALYTIC)

KL_CONVERGED = "kl_converged"
MAX_ITERS = "max_iters"
COST_GUARD = "cost_guard"
NOT_POSITIVE_DEFINITE = "not_positive_definite"

COST_GUARD_RTOL = 1e-8
MAX_HALVINGS = 20

__all__ = [
    "NanoConfig",
    "UpdateTrace",
    "predict",
    "map_initialize",
    "natural_gradient_iteration",
    "update_cost",
    "nano_update",
    "nano_step",
    "nano_filter_trajectory",
    "stationarity_residual",
]


@dataclass(frozen=True)
class NanoConfig:
    """Tuning knobs of the NANO update.

    Attributes:
        gamma: stop once KL(previous || next) falls below this.
        max_update_iters: cap on natural-gradient iterations per step.
        map_max_iters: Newton iteration cap for the MAP initializer.
        map_tol: gradient norm target for the MAP initializer, measured in
            prior-whitened coordinates.
        derivative_mode: ``"analytic_derivatives"`` uses loss gradients and
            Hessians; ``"stein_derivative_free"`` uses loss values only.
        rule: sigma-point rule for every expectation.
        jitter: starting jitter for SPD regularization; ``0`` tries the raw
            matrix first, ``None`` always adds the scale-aware seed.
        map_init: use the Laplace/MAP initializer; when off the iteration
            starts from the prior.
    """

    gamma: float = 1e-6
    max_update_iters: int = 10
    map_max_iters: int = 50
    map_tol: float = 1e-8
    derivative_mode: str = ANALYTIC
    rule: object = DEFAULT_RULE
    jitter: float | None = 0.0
    map_init: bool = True

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.max_update_iters < 1:
            raise ValueError("max_update_iters must be >= 1")
        if self.map_max_iters < 1:
            raise ValueError("map_max_iters must be >= 1")
        if not self.map_tol > 0:
            raise ValueError("map_tol must be positive")
        if self.derivative_mode not in DERIVATIVE_MODES:
            raise ValueError(f"derivative_mode must be one of {DERIVATIVE_MODES}")


@dataclass
class UpdateTrace:
    """Per-iterate record of one update.

    ``means``, ``precisions`` and ``costs`` hold the initial iterate at index
    0 followed by one entry per iteration; ``kls[i]`` is the KL from iterate
    ``i`` to iterate ``i + 1``. ``prior`` is the belief the update started
    from, kept so fixed-point checks can be rerun afterwards.
    """

    means: list = field(default_factory=list)
    precisions: list = field(default_factory=list)
    costs: list = field(default_factory=list)
    kls: list = field(default_factory=list)
    reason: str = ""
    map_fallback: bool = False
    map_iterations: int = 0
    prior: GaussianBelief | None = None

    @property
    def iterations(self) -> int:
        return len(self.kls)

    def to_jsonl(self, step: int | None = None) -> str:
        lines = []
        for i, cost in enumerate(self.costs):
            rec = {"iteration": i, "J": cost, "KL": self.kls[i - 1] if i else None}
            if step is not None:
                rec = {"step": step, **rec}
            lines.append(json.dumps(rec))
        return "\n".join(lines)


class _Prior:
    """Prior belief with its factorizations cached."""

    def __init__(self, belief: GaussianBelief):
        self.mean = belief.mean
        self.cov = belief.covariance
        self.lower = cholesky_spd(self.cov)
        self.precision = inverse_from_cholesky(self.lower)
        self.logdet = 2.0 * float(np.sum(np.log(np.diagonal(self.lower))))


def _as_prior(prior) -> _Prior:
    return prior if isinstance(prior, _Prior) else _Prior(prior)


class _Iterate:
    """Gaussian iterate in precision form with one sigma-point sweep.

    The sweep yields the expected loss, gradient and Hessian under the
    iterate; the cost J and the next step both reuse it.
    """

    def __init__(self, mean, precision, prior: _Prior, loss, y, config: NanoConfig, prec_lower=None):
        self.mean = mean
        self.precision = precision
        self.prec_lower = cholesky_spd(precision) if prec_lower is None else prec_lower
        self.cov = inverse_from_cholesky(self.prec_lower)
        self.lower = cholesky_spd(self.cov)
        self.exp_loss, self.exp_grad, self.exp_hess = _expectations(
            mean, self.cov, self.lower, precision, loss, y, config
        )
        self.cost = self.exp_loss + _kl_to_prior(mean, self.cov, self.lower, prior)

    @property
    def belief(self) -> GaussianBelief:
        return GaussianBelief(self.mean, self.cov)


def _kl_to_prior(mean, cov, lower, prior: _Prior) -> float:
    n = mean.size
    d = prior.mean - mean
    z = cho_solve_lower(prior.lower, d)
    logdet = 2.0 * float(np.sum(np.log(np.diagonal(lower))))
    value = 0.5 * (np.sum(prior.precision * cov) + d @ z - n + prior.logdet - logdet)
    return max(float(value), 0.0)


def _expectations(mean, cov, lower, precision, loss, y, config: NanoConfig):
    pts, wm, _ = sigma_points(mean, cov, config.rule, lower=lower)
    if config.derivative_mode == ANALYTIC:
        val, grad, hess = loss.derivatives(pts, y)
        check_finite(np.asarray(val), "loss")
        check_finite(grad, "loss gradient")
        check_finite(hess, "loss Hessian")
        e_hess = np.tensordot(wm, hess, axes=1)
        return float(wm @ val), wm @ grad, symmetrize(e_hess)
    values = check_finite(np.asarray(loss.value(pts, y), dtype=float), "loss")
    s, v, m = weighted_residuals(pts, wm, mean, values)
    e_grad = precision @ v
    e_hess = precision @ m @ precision - s * precision
    return s, e_grad, symmetrize(e_hess)


def _step(it: _Iterate, prior: _Prior, config: NanoConfig):
    prec, lower = regularized_cholesky(prior.precision + it.exp_hess, jitter=config.jitter)
    rhs = it.exp_grad + prior.precision @ (it.mean - prior.mean)
    return it.mean - cho_solve_lower(lower, rhs), prec, lower


def natural_gradient_iteration(iterate, prior: GaussianBelief, loss, y, config: NanoConfig = NanoConfig()):
    """One natural-gradient step from ``iterate = (mean, precision)``.

    Returns the next ``(mean, precision)``.

    Raises:
        RegularizationFailed: if the new precision cannot be made SPD.
        NonFiniteFunctionValue: if the loss blows up at a sigma point.
    """
    p = _as_prior(prior)
    mean, precision = (np.asarray(a, dtype=float) for a in iterate)
    it = _Iterate(mean, symmetrize(precision), p, loss, y, config)
    new_mean, new_prec, _ = _step(it, p, config)
    return new_mean, new_prec


def update_cost(iterate: GaussianBelief, prior: GaussianBelief, loss, y, rule=DEFAULT_RULE) -> float:
    """``E[l]`` under the iterate plus its KL divergence to the prior."""
    p = _as_prior(prior)
    lower = cholesky_spd(iterate.covariance)
    pts, wm, _ = sigma_points(iterate.mean, iterate.covariance, rule, lower=lower)
    values = check_finite(np.asarray(loss.value(pts, y), dtype=float), "loss")
    return float(wm @ values) + _kl_to_prior(iterate.mean, iterate.covariance, lower, p)


def _newton_direction(hess, grad):
    """Newton step; an indefinite Hessian gets its eigenvalues replaced by
    their absolute values so the step still descends."""
    try:
        return -cho_solve_lower(cholesky_spd(hess), grad)
    except NotPositiveDefinite:
        pass
    vals, vecs = np.linalg.eigh(hess)
    floor = 1e-8 * max(float(np.abs(vals).max()), 1e-300)
    mod = np.maximum(np.abs(vals), floor)
    return -vecs @ ((vecs.T @ grad) / mod)


def map_initialize(prior: GaussianBelief, loss, y, config: NanoConfig = NanoConfig()):
    """Laplace initialization at the MAP point.

    Runs damped Newton with backtracking on
    ``0.5 (x - mu)^T P^{-1} (x - mu) + l(x, y)`` from the prior mean.

    Returns:
        ``(mean0, precision0, iterations)``. ``precision0`` is the negative
        log-posterior Hessian at the MAP point, or the prior precision when
        that Hessian is not SPD.

    Raises:
        MapDivergence: if the whitened gradient norm stays above
            ``config.map_tol`` after ``config.map_max_iters`` iterations.
    """
    p = _as_prior(prior)

    def objective(x):
        d = x - p.mean
        return 0.5 * d @ p.precision @ d + float(loss.value(x, y))

    x = p.mean.copy()
    for k in range(config.map_max_iters + 1):
        _, g_loss, h_loss = loss.derivatives(x, y)
        grad = p.precision @ (x - p.mean) + g_loss
        hess = symmetrize(p.precision + h_loss)
        if not (np.all(np.isfinite(grad)) and np.all(np.isfinite(hess))):
            raise MapDivergence("non-finite loss derivatives during MAP search")
        if np.linalg.norm(p.lower.T @ grad) < config.map_tol:
            break
        if k == config.map_max_iters:
            raise MapDivergence(f"MAP search did not converge in {config.map_max_iters} iterations")
        direction = _newton_direction(hess, grad)
        slope = float(grad @ direction)
        f0 = objective(x)
        if -slope < max(config.map_tol**2, 1e-14 * (1.0 + abs(f0))):
            # predicted decrease is below what the objective can resolve
            break
        step = 1.0
        for _ in range(MAX_HALVINGS + 1):
            candidate = x + step * direction
            fc = objective(candidate)
            if np.isfinite(fc) and fc <= f0 + 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            raise MapDivergence("backtracking line search failed")
        x = candidate
    precision0 = symmetrize(p.precision + h_loss)
    try:
        cholesky_spd(precision0)
    except NotPositiveDefinite:
        precision0 = p.precision.copy()
    return x, precision0, k


def nano_update(prior: GaussianBelief, loss, y, config: NanoConfig = NanoConfig()):
    """Iterate natural-gradient steps from the Laplace initialization.

    Stops on KL(previous || next) < ``gamma`` (returns the latest iterate),
    after ``max_update_iters`` (latest iterate), or when an iteration raises
    the cost by more than ``1e-8 (1 + |J|)`` or loses positive definiteness
    (both return the lowest-cost iterate seen).

    Returns:
        ``(posterior, trace)``.
    """
    p = _as_prior(prior)
    trace = UpdateTrace(prior=prior if isinstance(prior, GaussianBelief) else GaussianBelief(p.mean, p.cov))
    if config.map_init:
        try:
            mean0, prec0, trace.map_iterations = map_initialize(p, loss, y, config)
        except MapDivergence:
            mean0, prec0 = p.mean.copy(), p.precision.copy()
            trace.map_fallback = True
    else:
        mean0, prec0 = p.mean.copy(), p.precision.copy()

    state = _Iterate(mean0, prec0, p, loss, y, config)
    trace.means.append(state.mean)
    trace.precisions.append(state.precision)
    trace.costs.append(state.cost)
    best = state
    reason = MAX_ITERS
    for _ in range(config.max_update_iters):
        try:
            mean, prec, prec_lower = _step(state, p, config)
            nxt = _Iterate(mean, prec, p, loss, y, config, prec_lower=prec_lower)
        except (NotPositiveDefinite, RegularizationFailed):
            reason = NOT_POSITIVE_DEFINITE
            break
        kl = kl_to_precision(state.mean, state.cov, state.lower, nxt.mean, nxt.precision, nxt.prec_lower)
        trace.means.append(nxt.mean)
        trace.precisions.append(nxt.precision)
        trace.costs.append(nxt.cost)
        trace.kls.append(kl)
        if nxt.cost > state.cost + COST_GUARD_RTOL * (1.0 + abs(state.cost)):
            reason = COST_GUARD
            break
        if nxt.cost < best.cost:
            best = nxt
        state = nxt
        if kl < config.gamma:
            reason = KL_CONVERGED
            break
    trace.reason = reason
    final = state if reason in (KL_CONVERGED, MAX_ITERS) else best
    return final.belief, trace


def stationarity_residual(posterior: GaussianBelief, prior: GaussianBelief, loss, y, config: NanoConfig = NanoConfig()) -> float:
    """KL from ``posterior`` to the Gaussian given by the first-order conditions.

    The right-hand sides are evaluated under ``posterior`` itself, so a
    stationary point of the update cost gives zero.
    """
    p = _as_prior(prior)
    lower = cholesky_spd(posterior.covariance)
    precision = symmetrize(cho_solve_lower(lower, np.eye(posterior.dim)))
    it = _Iterate(posterior.mean, precision, p, loss, y, config)
    mean, prec, prec_lower = _step(it, p, config)
    return kl_to_precision(it.mean, it.cov, it.lower, mean, prec, prec_lower)


def nano_step(belief: GaussianBelief, model, loss, y, config: NanoConfig = NanoConfig(), u=None) -> FilterStepResult:
    """Predict then update; the trace rides along in the result."""
    start = time.perf_counter()
    mean, cov = predict_arrays(belief.mean, belief.covariance, model, config.rule, u)
    posterior, trace = nano_update(GaussianBelief(mean, cov), loss, y, config)
    return FilterStepResult(posterior, trace.iterations, time.perf_counter() - start, trace)


def nano_filter_trajectory(model, loss, x0_belief: GaussianBelief, measurements, config: NanoConfig = NanoConfig(), inputs=None):
    """Run NANO over ``y_1..y_T``.

    Raises:
        StepFailure: carrying the 1-based step index and the original error.
    """
    results = []
    belief = x0_belief
    for t, y in enumerate(np.asarray(measurements, dtype=float), start=1):
        u = None if inputs is None else inputs[t - 1]
        try:
            res = nano_step(belief, model, loss, y, config, u)
        except Exception as exc:  # noqa: BLE001 - re-raised with context
            raise StepFailure(t, exc) from exc
        results.append(res)
        belief = res.posterior
    return results
