"""Default benchmark definitions.

Scenario constants (initial states, initial covariances, robust-loss
parameters) live here so configs can reference a benchmark by id and
override only what they need.
"""

from __future__ import annotations

import numpy as np

from ..models import NoiseSpec
from .harness import BenchmarkSpec, FilterSpec, build_model

AIR_TRAFFIC_X0 = (130.0, 25.0, -20.0, 1.0, -4.0 * np.pi / 180.0)
# position std equal to the radar range std: a track started from one fix
AIR_TRAFFIC_P0 = (2500.0, 100.0, 2500.0, 100.0, 1e-3)
# informative start for the contaminated runs; bounded-influence losses
# ignore measurements whose predicted residual is far in the tail
AIR_TRAFFIC_OUTLIER_P0 = (25.0, 4.0, 25.0, 4.0, 1e-4)
WIENER_X0 = (0.0, 0.0, 1.0, 1.0)
WIENER_P0 = (1.0, 1.0, 1.0, 1.0)
UGV_X0 = (0.0, 0.0, 0.0)
UGV_P0 = (0.01, 0.01, 0.003)

_BASELINES = ("ekf", "ukf", "iekf", "plf")


def _filters(*entries):
    return tuple(FilterSpec(f, loss, dict(params)) for f, loss, params in entries)


def _gauss(*ids):
    return [(i, "gaussian", {}) for i in ids]


BENCHMARKS = {
    "wiener": dict(
        model="wiener",
        T=100,
        trials=100,
        x0=WIENER_X0,
        P0=WIENER_P0,
        filters=_gauss("kf", *_BASELINES, "nano"),
    ),
    "wiener_outlier": dict(
        model="wiener",
        T=100,
        trials=50,
        x0=WIENER_X0,
        P0=WIENER_P0,
        outliers=(0.1, 1000.0),
        filters=_gauss("kf", *_BASELINES, "nano")
        + [
            ("nano", "huber", {"delta": 1.0}),
            ("nano", "weight", {"c": 25.0}),
            ("nano", "beta", {"beta": 0.1}),
        ],
    ),
    "air_traffic": dict(
        model="air_traffic",
        T=100,
        trials=50,
        x0=AIR_TRAFFIC_X0,
        P0=AIR_TRAFFIC_P0,
        filters=_gauss(*_BASELINES, "nano"),
    ),
    "air_traffic_outlier": dict(
        model="air_traffic",
        T=100,
        trials=50,
        x0=AIR_TRAFFIC_X0,
        P0=AIR_TRAFFIC_OUTLIER_P0,
        outliers=(0.1, 100.0),
        filters=_gauss(*_BASELINES, "nano")
        + [
            ("nano", "huber", {"delta": 1.0}),
            ("nano", "weight", {"c": 5.0}),
            ("nano", "beta", {"beta": 1e-2}),
        ],
    ),
    "ugv": dict(
        model="ugv",
        T=100,
        trials=50,
        x0=UGV_X0,
        P0=UGV_P0,
        filters=_gauss(*_BASELINES, "nano"),
    ),
}


def benchmark_spec(
    name: str,
    trials: int | None = None,
    seed_base: int = 0,
    T: int | None = None,
    filters=None,
    model_params: dict | None = None,
    P0=None,
) -> BenchmarkSpec:
    """Build the :class:`BenchmarkSpec` of a named benchmark with optional overrides.

    ``filters`` is a sequence of :class:`FilterSpec`; ``P0`` is either a
    diagonal or a full matrix.
    """
    try:
        d = BENCHMARKS[name]
    except KeyError:
        raise ValueError(f"unknown benchmark {name!r}; expected one of {sorted(BENCHMARKS)}") from None
    model_params = dict(model_params or {})
    model = build_model(d["model"], model_params)
    contamination = None
    if "outliers" in d:
        prob, scale = d["outliers"]
        contamination = NoiseSpec(model.R, prob, scale)
    p0 = np.asarray(d["P0"] if P0 is None else P0, dtype=float)
    if p0.ndim == 1:
        p0 = np.diag(p0)
    return BenchmarkSpec(
        name=name,
        model=d["model"],
        T=d["T"] if T is None else int(T),
        trials=d["trials"] if trials is None else int(trials),
        seed_base=int(seed_base),
        filters=tuple(filters) if filters is not None else _filters(*d["filters"]),
        x0=tuple(float(v) for v in d["x0"]),
        P0=tuple(tuple(float(v) for v in row) for row in p0),
        contamination=contamination,
        model_params=model_params,
    )


MODEL_INITIAL_BELIEF = {
    "wiener": (WIENER_X0, WIENER_P0),
    "air_traffic": (AIR_TRAFFIC_X0, AIR_TRAFFIC_P0),
    "ugv": (UGV_X0, UGV_P0),
}
