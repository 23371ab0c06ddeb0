"""Paired-seed Monte-Carlo benchmarks and their CSV/JSON reports."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..baselines import ekf_step, iekf_step, kf_step, plf_step, ukf_step
from ..errors import DimensionMismatch, FilterError, StepFailure
from ..gaussian import GaussianBelief
from ..losses import LOSS_KINDS, make_loss
from ..models import STREAM_FILTER_INIT, NoiseSpec, Trajectory, counter_rng, psd_sqrt, simulate
from ..nano import NanoConfig, nano_step
from ..quadrature import SigmaPointRule
from .systems import air_traffic_model, ugv_inputs, ugv_model, wiener_velocity_model

FILTER_IDS = ("kf", "ekf", "ukf", "iekf", "plf", "nano")
MODEL_IDS = ("wiener", "air_traffic", "ugv")

# per-filter tunables accepted in FilterSpec.params (besides loss parameters)
UT_PARAMS = ("ut_alpha", "ut_beta", "ut_kappa")
FILTER_PARAMS = {
    "kf": (),
    "ekf": (),
    "ukf": UT_PARAMS,
    "iekf": ("max_iters", "tol"),
    "plf": UT_PARAMS + ("max_iters", "gamma"),
    "nano": UT_PARAMS
    + ("gamma", "max_update_iters", "map_max_iters", "map_tol", "derivative_mode", "map_init"),
}
LOSS_PARAMS = {kind: names for kind, (_, names) in LOSS_KINDS.items()}


@dataclass(frozen=True)
class FilterSpec:
    """One filter entry of a benchmark: id, loss id and parameters."""

    filter: str
    loss: str = "gaussian"
    params: dict = field(default_factory=dict)
    label: str = ""

    def __post_init__(self):
        if self.filter not in FILTER_IDS:
            raise ValueError(f"unknown filter id {self.filter!r}; expected one of {FILTER_IDS}")
        if self.loss not in LOSS_PARAMS:
            raise ValueError(f"unknown loss id {self.loss!r}; expected one of {sorted(LOSS_PARAMS)}")
        if self.filter != "nano" and self.loss != "gaussian":
            raise ValueError(f"filter {self.filter!r} only supports the gaussian loss")
        allowed = set(FILTER_PARAMS[self.filter]) | set(LOSS_PARAMS[self.loss])
        unknown = set(self.params) - allowed
        if unknown:
            raise ValueError(f"unknown parameters for {self.filter}/{self.loss}: {sorted(unknown)}")
        missing = set(LOSS_PARAMS[self.loss]) - set(self.params)
        if missing:
            raise ValueError(f"loss {self.loss!r} needs parameters {sorted(missing)}")
        if not self.label:
            object.__setattr__(self, "label", self.default_label())

    def default_label(self) -> str:
        if self.loss == "gaussian":
            return self.filter
        loss_args = ",".join(f"{k}={self.params[k]:g}" for k in LOSS_PARAMS[self.loss])
        return f"{self.filter}-{self.loss}({loss_args})"

    def to_dict(self) -> dict:
        return {"filter": self.filter, "loss": self.loss, "params": dict(self.params), "label": self.label}


@dataclass(frozen=True)
class BenchmarkSpec:
    """A Monte-Carlo experiment.

    Trial ``k`` uses seed ``seed_base + k`` for everything random, so every
    filter sees the same trajectory for a given seed.
    """

    name: str
    model: str
    T: int
    trials: int
    seed_base: int
    filters: tuple
    x0: tuple
    P0: tuple
    contamination: Optional[NoiseSpec] = None
    model_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in MODEL_IDS:
            raise ValueError(f"unknown model id {self.model!r}; expected one of {MODEL_IDS}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.T < 0:
            raise ValueError("T must be >= 0")
        if not self.filters:
            raise ValueError("at least one filter is required")
        labels = [f.label for f in self.filters]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate filter labels: {labels}")

    def build_model(self):
        return build_model(self.model, self.model_params)

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "model": self.model,
            "T": self.T,
            "trials": self.trials,
            "seed_base": self.seed_base,
            "x0": list(self.x0),
            "P0": [list(r) for r in self.P0],
            "model_params": self.model_params,
            "filters": [f.to_dict() for f in self.filters],
            "contamination": None,
        }
        if self.contamination is not None:
            out["contamination"] = {
                "outlier_prob": self.contamination.outlier_prob,
                "outlier_scale": self.contamination.outlier_scale,
            }
        return out


@dataclass
class FilterRun:
    rmse: float
    failed: bool
    step_times: list
    iterations: float
    failure: str = ""
    reasons: dict = field(default_factory=dict)


@dataclass
class TrialResult:
    seed: int
    trajectory_hash: str
    runs: dict


@dataclass
class BenchmarkResult:
    spec: BenchmarkSpec
    trials: list
    summary: dict


def build_model(model_id: str, params: dict | None = None):
    params = dict(params or {})
    if model_id == "wiener":
        return wiener_velocity_model(**params)
    if model_id == "air_traffic":
        return air_traffic_model(params)
    if model_id == "ugv":
        return ugv_model(params)
    raise ValueError(f"unknown model id {model_id!r}")


def _rule(params) -> SigmaPointRule:
    return SigmaPointRule(
        alpha=params.get("ut_alpha", 1.0),
        beta=params.get("ut_beta", 2.0),
        kappa=params.get("ut_kappa"),
    )


def make_stepper(spec: FilterSpec, model):
    """``step(belief, y, u) -> FilterStepResult`` for a filter entry."""
    p = spec.params
    fid = spec.filter
    if fid == "kf":
        return lambda b, y, u: kf_step(b, model, y, u)
    if fid == "ekf":
        return lambda b, y, u: ekf_step(b, model, y, u)
    if fid == "ukf":
        rule = _rule(p)
        return lambda b, y, u: ukf_step(b, model, y, rule, u)
    if fid == "iekf":
        kw = {k: p[k] for k in ("max_iters", "tol") if k in p}
        return lambda b, y, u: iekf_step(b, model, y, u=u, **kw)
    if fid == "plf":
        rule = _rule(p)
        kw = {"max_iters": p.get("max_iters", 20), "kl_tol": p.get("gamma", 1e-6)}
        return lambda b, y, u: plf_step(b, model, y, rule, u=u, **kw)
    config = nano_config(p)
    loss = make_loss(spec.loss, model, **{k: p[k] for k in LOSS_PARAMS[spec.loss]})
    return lambda b, y, u: nano_step(b, model, loss, y, config, u)


def nano_config(params: dict) -> NanoConfig:
    keys = ("gamma", "max_update_iters", "map_max_iters", "map_tol", "derivative_mode", "map_init")
    kw = {k: params[k] for k in keys if k in params}
    return NanoConfig(rule=_rule(params), **kw)


def run_filter(step, x0_belief: GaussianBelief, trajectory: Trajectory):
    """Run a stepper over a trajectory.

    Raises:
        StepFailure: with the 1-based step index.
    """
    results = []
    belief = x0_belief
    for t in range(1, trajectory.T + 1):
        try:
            res = step(belief, trajectory.measurements[t - 1], trajectory.input_at(t))
        except Exception as exc:  # noqa: BLE001 - re-raised with the step index
            raise StepFailure(t, exc) from exc
        results.append(res)
        belief = res.posterior
    return results


def rmse(truth: Trajectory, estimates) -> float:
    """Root mean square error over ``x_1..x_T`` normalized by ``n * T``.

    ``estimates`` holds beliefs (or mean vectors) for steps ``1..T``.
    """
    means = np.array([e.mean if isinstance(e, GaussianBelief) else e for e in estimates], dtype=float)
    states = np.asarray(truth.states[1:], dtype=float)
    if means.size == 0 and states.size == 0:
        return 0.0
    if means.shape != states.shape:
        raise DimensionMismatch(f"estimates {means.shape} do not match truth {states.shape}")
    return float(np.sqrt(np.sum((states - means) ** 2) / states.size))


def trajectory_hash(tr: Trajectory) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(tr.states).tobytes())
    h.update(np.ascontiguousarray(tr.measurements).tobytes())
    return h.hexdigest()[:16]


def make_trial(spec: BenchmarkSpec, model, trial: int):
    """Trajectory and initial filter belief for one trial."""
    seed = spec.seed_base + trial
    p0 = np.asarray(spec.P0, dtype=float)
    x0_belief = GaussianBelief(np.asarray(spec.x0, dtype=float), p0)
    noise = spec.contamination if spec.contamination is not None else NoiseSpec(model.R)
    inputs = ugv_inputs(seed, spec.T, spec.model_params) if spec.model == "ugv" else None
    tr = simulate(model, x0_belief, max(spec.T, 1), noise, seed, inputs)
    if spec.T == 0:
        tr = Trajectory(tr.states[:1], tr.measurements[:0], seed, None, tr.outliers[:0])
    # filter starts at truth plus one draw from its own stated uncertainty
    z = counter_rng(seed, 0, STREAM_FILTER_INIT).standard_normal(model.n)
    init = GaussianBelief(tr.states[0] + psd_sqrt(p0) @ z, p0)
    return tr, init


def run_trial(spec: BenchmarkSpec, trial: int) -> TrialResult:
    model = spec.build_model()
    tr, init = make_trial(spec, model, trial)
    runs = {}
    for fspec in spec.filters:
        step = make_stepper(fspec, model)
        try:
            results = run_filter(step, init, tr)
        except (StepFailure, FilterError) as exc:
            runs[fspec.label] = FilterRun(float("nan"), True, [], float("nan"), str(exc))
            continue
        reasons = {}
        for r in results:
            if r.trace is not None:
                reasons[r.trace.reason] = reasons.get(r.trace.reason, 0) + 1
        runs[fspec.label] = FilterRun(
            rmse=rmse(tr, [r.posterior for r in results]),
            failed=False,
            step_times=[r.wall_time for r in results],
            iterations=float(np.mean([r.iterations for r in results])) if results else 0.0,
            reasons=dict(sorted(reasons.items())),
        )
    return TrialResult(tr.seed, trajectory_hash(tr), runs)


def _run_trial_args(args):
    return run_trial(*args)


def default_workers() -> int:
    env = os.environ.get("NANO_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_benchmark(spec: BenchmarkSpec, workers: int | None = None) -> BenchmarkResult:
    """Run every trial and summarize per filter.

    Trials run in a process pool of ``workers`` (default from NANO_WORKERS or
    the core count); results are ordered by seed regardless. Use
    ``workers=1`` when the step times matter.
    """
    workers = default_workers() if workers is None else max(1, int(workers))
    workers = min(workers, spec.trials)
    jobs = [(spec, k) for k in range(spec.trials)]
    if workers == 1:
        trials = [run_trial(*job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trials = list(pool.map(_run_trial_args, jobs))
    return BenchmarkResult(spec, trials, summarize(spec, trials))


def summarize(spec: BenchmarkSpec, trials) -> dict:
    out = {}
    for fspec in spec.filters:
        runs = [t.runs[fspec.label] for t in trials]
        ok = np.array([r.rmse for r in runs if not r.failed])
        times = [s for r in runs for s in r.step_times]
        entry = {"failures": sum(r.failed for r in runs), "trials": len(runs)}
        if ok.size:
            q1, med, q3 = np.percentile(ok, [25, 50, 75])
            entry.update(
                mean_rmse=float(ok.mean()),
                median_rmse=float(med),
                q1_rmse=float(q1),
                q3_rmse=float(q3),
                min_rmse=float(ok.min()),
                max_rmse=float(ok.max()),
            )
        else:
            entry.update(mean_rmse=None, median_rmse=None, q1_rmse=None, q3_rmse=None, min_rmse=None, max_rmse=None)
        entry["mean_step_ms"] = 1e3 * float(np.mean(times)) if times else None
        out[fspec.label] = entry
    return out


# --- reports ------------------------------------------------------------------

SUMMARY_COLUMNS = ("benchmark", "filter", "mean_rmse", "median_rmse", "q1_rmse", "q3_rmse", "failures", "mean_step_ms")


def _clean(value):
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def results_json(result: BenchmarkResult) -> str:
    """Deterministic JSON: per-trial detail and RMSE summary, no wall times."""
    summary = {
        label: {k: v for k, v in entry.items() if k != "mean_step_ms"} for label, entry in result.summary.items()
    }
    trials = []
    for t in result.trials:
        runs = {}
        for label, r in t.runs.items():
            runs[label] = {
                "rmse": _clean(r.rmse),
                "failed": r.failed,
                "failure": r.failure,
                "mean_iterations": _clean(r.iterations),
                "termination": r.reasons,
            }
        trials.append({"seed": t.seed, "trajectory_hash": t.trajectory_hash, "filters": runs})
    doc = {"benchmark": result.spec.to_dict(), "summary": summary, "trials": trials}
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def summary_csv(results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for result in results:
        for label, e in result.summary.items():
            row = [result.spec.name, label]
            for key in SUMMARY_COLUMNS[2:]:
                v = e.get(key)
                row.append("" if v is None else (repr(v) if isinstance(v, float) else v))
            w.writerow(row)
    return buf.getvalue()


def timing_json(result: BenchmarkResult) -> str:
    doc = {
        "benchmark": result.spec.name,
        "mean_step_ms": {label: e["mean_step_ms"] for label, e in result.summary.items()},
        "per_trial_mean_step_ms": [
            {label: (1e3 * float(np.mean(r.step_times)) if r.step_times else None) for label, r in t.runs.items()}
            for t in result.trials
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def write_reports(results, out_dir) -> list:
    """Write ``summary.csv``, ``<name>.json`` and ``<name>.timing.json``.

    All content is rendered before the first file is opened.
    """
    out_dir = Path(out_dir)
    files = {out_dir / "summary.csv": summary_csv(results)}
    for r in results:
        files[out_dir / f"{r.spec.name}.json"] = results_json(r)
        files[out_dir / f"{r.spec.name}.timing.json"] = timing_json(r)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path, text in files.items():
        path.write_text(text)
    return list(files)
