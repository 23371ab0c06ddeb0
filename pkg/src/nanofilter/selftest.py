"""Fast health checks behind ``nano selftest``."""

from __future__ import annotations

import itertools

import numpy as np

from .baselines import kf_step
from .bench.catalog import MODEL_INITIAL_BELIEF
from .bench.systems import air_traffic_model, ugv_model, wiener_velocity_model
from .gaussian import GaussianBelief, cholesky_spd
from .losses import GaussianNLL
from .models import StateSpaceModel, check_derivatives, simulate
from .nano import STEIN, NanoConfig, nano_filter_trajectory, natural_gradient_iteration
from .quadrature import DEFAULT_RULE, FifthDegreeRule


def gaussian_moment(powers) -> float:
    """``E[prod z_i^k_i]`` for standard normal ``z``."""
    out = 1.0
    for k in powers:
        if k % 2:
            return 0.0
        out *= float(np.prod(np.arange(k - 1, 0, -2))) if k else 1.0
    return out


def check_sigma_point_weights(rule=DEFAULT_RULE, max_dim: int = 5, tol: float = 1e-10) -> str:
    worst = 0.0
    for n in range(1, max_dim + 1):
        z, wm, _ = rule.unit_points(n)
        for degree in range(0, 4):
            for combo in itertools.combinations_with_replacement(range(n), degree):
                powers = np.bincount(np.array(combo, dtype=int), minlength=n) if combo else np.zeros(n, int)
                est = float(wm @ np.prod(z**powers, axis=1))
                worst = max(worst, abs(est - gaussian_moment(powers)))
    if worst > tol:
        raise AssertionError(f"moment error {worst:.3e} exceeds {tol:g}")
    return f"degree<=3 moments exact to {worst:.1e} for n<=5"


def random_affine_model(rng, n, m) -> StateSpaceModel:
    a = rng.standard_normal((n, n)) / np.sqrt(n)
    c = rng.standard_normal((m, n))
    bq = rng.standard_normal((n, n))
    br = rng.standard_normal((m, m))
    q = bq @ bq.T / n + 0.1 * np.eye(n)
    r = br @ br.T / m + 0.1 * np.eye(m)
    return StateSpaceModel(
        n=n,
        m=m,
        f=lambda x, u=None: np.asarray(x) @ a.T,
        g=lambda x: np.asarray(x) @ c.T,
        Q=q,
        R=r,
        f_jacobian=lambda x, u=None: np.broadcast_to(a, np.shape(x)[:-1] + a.shape),
        g_jacobian=lambda x: np.broadcast_to(c, np.shape(x)[:-1] + c.shape),
        A=a,
        C=c,
        name="affine",
    )


def random_spd(rng, n, scale=1.0):
    b = rng.standard_normal((n, n))
    return scale * (b @ b.T / n + 0.2 * np.eye(n))


def check_kf_equivalence(instances: int = 20, seed: int = 0, tol: float = 1e-9) -> str:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        n, m = rng.integers(1, 5, size=2)
        model = random_affine_model(rng, n, m)
        belief = GaussianBelief(rng.standard_normal(n), random_spd(rng, n))
        y = rng.standard_normal(m)
        kf = kf_step(belief, model, y).posterior
        prior = GaussianBelief(model.A @ belief.mean, model.A @ belief.covariance @ model.A.T + model.Q)
        start = (rng.standard_normal(n), random_spd(rng, n))
        mean, prec = natural_gradient_iteration(start, prior, GaussianNLL(model), y)
        cov = np.linalg.inv(prec)
        scale = max(1.0, np.abs(kf.covariance).max(), np.abs(kf.mean).max())
        worst = max(worst, np.abs(mean - kf.mean).max() / scale, np.abs(cov - kf.covariance).max() / scale)
    if worst > tol:
        raise AssertionError(f"one iteration differs from KF by {worst:.3e}")
    return f"one iteration matches KF to {worst:.1e} on {instances} instances"


def check_stein_agreement(instances: int = 20, seed: int = 1, tol: float = 1e-9) -> str:
    rng = np.random.default_rng(seed)
    worst = 0.0
    rule = FifthDegreeRule()
    for _ in range(instances):
        n, m = rng.integers(1, 5, size=2)
        model = random_affine_model(rng, n, m)
        prior = GaussianBelief(rng.standard_normal(n), random_spd(rng, n))
        y = rng.standard_normal(m)
        start = (rng.standard_normal(n), random_spd(rng, n))
        loss = GaussianNLL(model)
        a = natural_gradient_iteration(start, prior, loss, y, NanoConfig(rule=rule))
        s = natural_gradient_iteration(start, prior, loss, y, NanoConfig(rule=rule, derivative_mode=STEIN))
        scale = max(1.0, np.abs(a[1]).max())
        worst = max(worst, np.abs(a[0] - s[0]).max(), np.abs(a[1] - s[1]).max() / scale)
    if worst > tol:
        raise AssertionError(f"derivative-free and analytic steps differ by {worst:.3e}")
    return f"modes agree to {worst:.1e} on quadratic losses"


def check_spd_posteriors(steps: int = 20, seed: int = 3) -> str:
    model = air_traffic_model()
    x0, p0 = MODEL_INITIAL_BELIEF["air_traffic"]
    belief = GaussianBelief(np.array(x0), np.diag(p0))
    tr = simulate(model, belief, steps, seed=seed)
    results = nano_filter_trajectory(model, GaussianNLL(model), belief, tr.measurements)
    worst = 0.0
    for r in results:
        cov = r.posterior.covariance
        cholesky_spd(cov)
        prec = np.linalg.inv(cov)
        worst = max(worst, np.abs(prec @ cov - np.eye(model.n)).max())
    if worst > 1e-9:
        raise AssertionError(f"precision round trip error {worst:.3e}")
    return f"{steps} air-traffic posteriors SPD, round trip {worst:.1e}"


def check_model_derivatives() -> str:
    parts = []
    for model in (wiener_velocity_model(), air_traffic_model(), ugv_model()):
        report = check_derivatives(model, trials=5)
        parts.append(f"{model.name} {max(report.values()):.0e}")
    return ", ".join(parts)


def run_selftest(rule=DEFAULT_RULE):
    """Run every check; returns ``[(name, ok, detail)]``."""
    checks = [
        ("sigma-point weights", lambda: check_sigma_point_weights(rule)),
        ("kalman equivalence", check_kf_equivalence),
        ("stein agreement", check_stein_agreement),
        ("spd posteriors", check_spd_posteriors),
        ("model derivatives", check_model_derivatives),
    ]
    out = []
    for name, fn in checks:
        try:
            out.append((name, True, fn()))
        except Exception as exc:  # noqa: BLE001 - reported, not raised
            out.append((name, False, f"{type(exc).__name__}: {exc}"))
    return out
