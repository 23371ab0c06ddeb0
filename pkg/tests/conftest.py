from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

settings.register_profile(
    "repo", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")

seeds = st.integers(min_value=0, max_value=2**32 - 1)
dims = st.integers(min_value=1, max_value=5)


def random_spd(rng, n, scale=1.0):
    b = rng.standard_normal((n, n))
    return scale * (b @ b.T / n + 0.2 * np.eye(n))


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.abs(a - b).max() / max(1.0, np.abs(b).max()))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mc_sin():
    """Mean and standard error of sin(x), x ~ N(0, 0.25), from 10^7 samples."""
    x = np.random.default_rng(2024).normal(0.0, 0.5, 10_000_000)
    s = np.sin(x)
    return float(s.mean()), float(s.std(ddof=1) / np.sqrt(s.size))


def square_model(r=1.0):
    """Scalar random walk observed through ``x**2`` with noise variance ``r``."""
    from nanofilter.models import StateSpaceModel

    return StateSpaceModel(
        n=1,
        m=1,
        f=lambda x, u=None: np.asarray(x),
        g=lambda x: np.asarray(x) ** 2,
        Q=np.zeros((1, 1)),
        R=np.array([[r]]),
        f_jacobian=lambda x, u=None: np.ones(np.shape(x)[:-1] + (1, 1)),
        g_jacobian=lambda x: (2.0 * np.asarray(x))[..., None],
        g_hessian=lambda x: np.full(np.shape(x)[:-1] + (1, 1, 1), 2.0),
    )


def monte_carlo(fun, mean, std, samples=10_000_000, seed=0):
    """Mean and standard error of ``fun(x)`` for scalar ``x ~ N(mean, std^2)``."""
    x = np.random.default_rng(seed).normal(mean, std, samples)[:, None]
    v = np.asarray(fun(x), dtype=float)
    return v.mean(axis=0), v.std(axis=0, ddof=1) / np.sqrt(samples)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
