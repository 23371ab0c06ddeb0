"""State-space models ``x_{t+1} = f(x_t, u_t) + xi_t``, ``y_t = g(x_t) + zeta_t``.

Model maps are vectorized: ``f`` and ``g`` accept states with arbitrary
leading batch axes. Jacobians return ``(..., out, n)`` and measurement
Hessians ``(..., m, n, n)``. Missing derivative maps fall back to central
differences.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DerivativeMismatch, NonFiniteFunctionValue
from .gaussian import GaussianBelief

# RNG streams; every draw is keyed on (seed, time step, stream)
STREAM_INITIAL = 0
STREAM_PROCESS = 1
STREAM_MEASUREMENT = 2
STREAM_FILTER_INIT = 3
STREAM_INPUTS = 4


def counter_rng(seed: int, t: int, stream: int) -> np.random.Generator:
    """Independent generator for one (seed, time, stream) cell.

    Philox is counter-based, so each cell is reproducible on its own and
    trials can run in any order or process.
    """
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, int(t), int(stream), 0]))


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def psd_sqrt(cov: np.ndarray) -> np.ndarray:
    """A square root ``S`` with ``S S^T = cov`` that tolerates singular PSD input."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _central_jacobian(fun, x, step=1e-6):
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    h = step * (1.0 + np.abs(x))
    cols = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        hi = h[..., i : i + 1]
        diff = np.asarray(fun(x + hi * e) - fun(x - hi * e), dtype=float)
        denom = (2.0 * h[..., i]).reshape(x.shape[:-1] + (1,) * (diff.ndim - x.ndim + 1))
        cols.append(diff / denom)
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class StateSpaceModel:
    """One system definition.

    Attributes:
        f: transition ``f(x, u)``; ``u`` is ``None`` for input-free models.
        g: measurement map ``g(x)``.
        Q, R: process and measurement noise covariances.
        f_jacobian, g_jacobian, g_hessian: optional analytic derivatives.
        A, C: set for affine models so the exact Kalman filter applies.
        angle_indices: measurement channels whose residuals wrap to (-pi, pi].
        typical_state, typical_scale: where derivative self-checks sample.
    """

    n: int
    m: int
    f: Callable
    g: Callable
    Q: np.ndarray
    R: np.ndarray
    f_jacobian: Optional[Callable] = None
    g_jacobian: Optional[Callable] = None
    g_hessian: Optional[Callable] = None
    A: Optional[np.ndarray] = None
    C: Optional[np.ndarray] = None
    angle_indices: tuple = ()
    name: str = "model"
    typical_state: Optional[np.ndarray] = None
    typical_scale: Optional[np.ndarray] = None
    input_dim: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for label, mat, dim in (("Q", self.Q, self.n), ("R", self.R, self.m)):
            mat = np.asarray(mat, dtype=float)
            if mat.shape != (dim, dim):
                raise ValueError(f"{label} must be {dim}x{dim}, got {mat.shape}")
            if np.abs(mat - mat.T).max() > 1e-12 * max(np.abs(mat).max(), 1.0):
                raise ValueError(f"{label} is not symmetric")
            if np.linalg.eigvalsh(mat).min() < -1e-12 * max(np.abs(mat).max(), 1.0):
                raise ValueError(f"{label} is not positive semidefinite")
            mat.setflags(write=False)
            object.__setattr__(self, label, mat)

    @property
    def is_affine(self) -> bool:
        return self.A is not None and self.C is not None

    def transition(self, x, u=None):
        return self.f(x, u)

    def measure(self, x):
        return self.g(x)

    def residual(self, y, gx):
        """``y - g(x)`` with angle channels wrapped."""
        r = y - gx
        if self.angle_indices:
            r = np.array(r, dtype=float, copy=True)
            idx = list(self.angle_indices)
            r[..., idx] = wrap_angle(r[..., idx])
        return r

    def jac_f(self, x, u=None):
        if self.f_jacobian is not None:
            return self.f_jacobian(x, u)
        return _central_jacobian(lambda z: self.f(z, u), x)

    def jac_g(self, x):
        if self.g_jacobian is not None:
            return self.g_jacobian(x)
        return _central_jacobian(self.g, x)

    def hess_g(self, x):
        """Per-output Hessians ``(..., m, n, n)``."""
        if self.g_hessian is not None:
            return self.g_hessian(x)
        hess = _central_jacobian(self.jac_g, x, step=1e-5)
        return 0.5 * (hess + np.swapaxes(hess, -1, -2))


@dataclass(frozen=True)
class NoiseSpec:
    """Measurement noise ``(1-p) N(0, base) + p N(0, scale * base)``.

    One Bernoulli draw per time step contaminates the whole vector.
    """

    base_cov: np.ndarray
    outlier_prob: float = 0.0
    outlier_scale: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.outlier_prob <= 1.0:
            raise ValueError("outlier_prob must lie in [0, 1]")
        if self.outlier_scale < 1.0:
            raise ValueError("outlier_scale must be >= 1")
        object.__setattr__(self, "base_cov", np.asarray(self.base_cov, dtype=float))

    def sample(self, rng: np.random.Generator) -> tuple[np.ndarray, bool]:
        outlier = bool(rng.random() < self.outlier_prob) if self.outlier_prob > 0 else False
        z = rng.standard_normal(self.base_cov.shape[0])
        noise = psd_sqrt(self.base_cov) @ z
        if outlier:
            noise = noise * np.sqrt(self.outlier_scale)
        return noise, outlier


@dataclass(frozen=True)
class Trajectory:
    """Simulated truth ``x_0..x_T`` and measurements ``y_1..y_T``.

    ``inputs[t-1]`` drives the transition into ``x_t``.
    """

    states: np.ndarray
    measurements: np.ndarray
    seed: int
    inputs: Optional[np.ndarray] = None
    outliers: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.states) != len(self.measurements) + 1:
            raise ValueError("need exactly one more state than measurements")

    @property
    def T(self) -> int:
        return len(self.measurements)

    def input_at(self, t: int):
        """Input used by the transition into step ``t`` (1-based)."""
        return None if self.inputs is None else self.inputs[t - 1]

    def to_csv(self, path) -> None:
        n = self.states.shape[1]
        m = self.measurements.shape[1] if self.measurements.size else 0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"y{j + 1}" for j in range(m)])
            for t, x in enumerate(self.states):
                ys = [""] * m if t == 0 else [repr(float(v)) for v in self.measurements[t - 1]]
                w.writerow([t] + [repr(float(v)) for v in x] + ys)

    def measurements_to_csv(self, path) -> None:
        """Measurement file for ``nano filter``: ``t, y1..ym`` plus ``u1..uk``."""
        m = self.measurements.shape[1]
        k = 0 if self.inputs is None else self.inputs.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"y{j + 1}" for j in range(m)] + [f"u{j + 1}" for j in range(k)])
            for t in range(1, self.T + 1):
                row = [repr(float(v)) for v in self.measurements[t - 1]]
                if k:
                    row += [repr(float(v)) for v in self.inputs[t - 1]]
                w.writerow([t] + row)


def simulate(
    model: StateSpaceModel,
    x0_belief: GaussianBelief,
    T: int,
    meas_noise: NoiseSpec | None = None,
    seed: int = 0,
    inputs: np.ndarray | None = None,
) -> Trajectory:
    """Draw a trajectory of ``T`` steps.

    Raises:
        NonFiniteFunctionValue: if the model produces NaN/inf.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if meas_noise is None:
        meas_noise = NoiseSpec(model.R)
    if inputs is not None:
        inputs = np.asarray(inputs, dtype=float)
        if len(inputs) != T:
            raise ValueError(f"need {T} inputs, got {len(inputs)}")
    q_sqrt = psd_sqrt(model.Q)
    x = x0_belief.mean + psd_sqrt(x0_belief.covariance) @ counter_rng(
        seed, 0, STREAM_INITIAL
    ).standard_normal(model.n)
    states = [x]
    ys = []
    flags = []
    for t in range(1, T + 1):
        u = None if inputs is None else inputs[t - 1]
        xi = q_sqrt @ counter_rng(seed, t, STREAM_PROCESS).standard_normal(model.n)
        x = np.asarray(model.f(x, u), dtype=float) + xi
        zeta, flag = meas_noise.sample(counter_rng(seed, t, STREAM_MEASUREMENT))
        y = np.asarray(model.g(x), dtype=float) + zeta
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise NonFiniteFunctionValue(f"model blew up at step {t}")
        if model.angle_indices:
            idx = list(model.angle_indices)
            y[idx] = wrap_angle(y[idx])
        states.append(x)
        ys.append(y)
        flags.append(flag)
    return Trajectory(
        states=np.array(states),
        measurements=np.array(ys).reshape(T, model.m),
        seed=seed,
        inputs=inputs,
        outliers=np.array(flags, dtype=bool),
    )


def _rel_error(analytic, reference):
    scale = max(float(np.abs(reference).max()), 1e-8)
    return float(np.abs(analytic - reference).max()) / scale


def check_derivatives(
    model: StateSpaceModel, trials: int = 10, seed: int = 0, rtol: float = 1e-5
) -> dict:
    """Compare analytic derivatives with central differences at random states.

    Returns a ``{component: max relative error}`` report for the derivative
    maps the model supplies.

    Raises:
        DerivativeMismatch: naming the first component above ``rtol``.
    """
    rng = np.random.default_rng(seed)
    center = np.zeros(model.n) if model.typical_state is None else np.asarray(model.typical_state)
    scale = np.ones(model.n) if model.typical_scale is None else np.asarray(model.typical_scale)
    u = None
    if model.input_dim:
        u = np.asarray(model.params.get("typical_input", np.ones(model.input_dim)), dtype=float)
    report = {}
    for _ in range(trials):
        x = center + scale * rng.standard_normal(model.n)
        if model.f_jacobian is not None:
            ref = _central_jacobian(lambda z: model.f(z, u), x)
            err = _rel_error(model.f_jacobian(x, u), ref)
            report["f_jacobian"] = max(report.get("f_jacobian", 0.0), err)
        if model.g_jacobian is not None:
            ref = _central_jacobian(model.g, x)
            err = _rel_error(model.g_jacobian(x), ref)
            report["g_jacobian"] = max(report.get("g_jacobian", 0.0), err)
        if model.g_hessian is not None:
            ref = _central_jacobian(model.jac_g, x, step=1e-5)
            err = _rel_error(model.g_hessian(x), ref)
            report["g_hessian"] = max(report.get("g_hessian", 0.0), err)
    for component, err in report.items():
        if err > rtol:
            raise DerivativeMismatch(component, err)
    return report
