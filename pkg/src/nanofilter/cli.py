"""Command-line entry point ``nano``.

    nano bench --config FILE [--trials N --seed S --out DIR]
    nano filter --model ID --filter ID --loss ID --input FILE --out FILE
    nano selftest
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .bench.catalog import BENCHMARKS, MODEL_INITIAL_BELIEF, benchmark_spec
from .bench.harness import (
    FILTER_IDS,
    FilterSpec,
    MODEL_IDS,
    build_model,
    make_stepper,
    run_benchmark,
    run_filter,
    write_reports,
)
from .errors import ConfigError, FilterError, MalformedInput
from .gaussian import GaussianBelief
from .losses import LOSS_KINDS
from .models import Trajectory
from .nano import DERIVATIVE_MODES

COMMANDS = ("bench", "filter", "selftest")


@dataclass
class RunConfig:
    """Everything a run depends on; serializes to the JSON config format.

    ``trials`` and ``T`` default to the selected benchmark's values.
    ``gamma`` and ``derivative_mode`` override every filter entry that
    accepts them.
    """

    command: str = "bench"
    benchmark: str = "wiener"
    trials: int = BENCHMARKS["wiener"]["trials"]
    T: int = BENCHMARKS["wiener"]["T"]
    seed: int = 0
    out: str = "results"
    workers: Optional[int] = None
    diagnostics: bool = False
    gamma: Optional[float] = None
    derivative_mode: Optional[str] = None
    filters: Optional[list] = None
    model: Optional[str] = None
    model_params: dict = field(default_factory=dict)
    filter: str = "nano"
    loss: str = "gaussian"
    loss_params: dict = field(default_factory=dict)
    filter_params: dict = field(default_factory=dict)
    x0: Optional[list] = None
    P0: Optional[list] = None
    input: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _opt(check):
    return lambda v: v is None or check(v)


def _num_list(v):
    return isinstance(v, list) and all(_is_num(x) or (isinstance(x, list) and all(_is_num(z) for z in x)) for x in v)


_SCALARS = (str, int, float, bool, list)

_SCHEMA = {
    "command": (lambda v: v in COMMANDS, f"one of {COMMANDS}"),
    "benchmark": (lambda v: v in BENCHMARKS, f"one of {sorted(BENCHMARKS)}"),
    "trials": (lambda v: _is_int(v) and v >= 1, "an integer >= 1"),
    "T": (lambda v: _is_int(v) and v >= 0, "an integer >= 0"),
    "seed": (lambda v: _is_int(v) and v >= 0, "a nonnegative integer"),
    "out": (lambda v: isinstance(v, str) and v != "", "a non-empty path"),
    "workers": (_opt(lambda v: _is_int(v) and v >= 1), "null or an integer >= 1"),
    "diagnostics": (lambda v: isinstance(v, bool), "true or false"),
    "gamma": (_opt(lambda v: _is_num(v) and v > 0), "null or a positive number"),
    "derivative_mode": (_opt(lambda v: v in DERIVATIVE_MODES), f"null or one of {DERIVATIVE_MODES}"),
    "filters": (_opt(lambda v: isinstance(v, list) and len(v) > 0), "null or a non-empty list"),
    "model": (_opt(lambda v: v in MODEL_IDS), f"null or one of {MODEL_IDS}"),
    "model_params": (lambda v: isinstance(v, dict), "an object"),
    "filter": (lambda v: v in FILTER_IDS, f"one of {FILTER_IDS}"),
    "loss": (lambda v: v in LOSS_KINDS, f"one of {sorted(LOSS_KINDS)}"),
    "loss_params": (lambda v: isinstance(v, dict) and all(_is_num(x) for x in v.values()), "an object of numbers"),
    "filter_params": (lambda v: isinstance(v, dict) and all(isinstance(x, _SCALARS) or x is None for x in v.values()), "an object of scalars"),
    "x0": (_opt(lambda v: isinstance(v, list) and all(_is_num(x) for x in v)), "null or a list of numbers"),
    "P0": (_opt(_num_list), "null, a diagonal, or a matrix"),
    "input": (_opt(lambda v: isinstance(v, str)), "null or a path"),
}
assert set(_SCHEMA) == {f.name for f in fields(RunConfig)}

_FILTER_KEYS = ("filter", "loss", "params", "label")


def _check_filter_entry(i, entry) -> dict:
    key = f"filters[{i}]"
    if not isinstance(entry, dict):
        raise ConfigError(key, "must be an object")
    for k in entry:
        if k not in _FILTER_KEYS:
            raise ConfigError(f"{key}.{k}", f"unknown key; expected one of {_FILTER_KEYS}")
    if "filter" not in entry:
        raise ConfigError(f"{key}.filter", "missing")
    params = entry.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError(f"{key}.params", "must be an object")
    try:
        FilterSpec(entry["filter"], entry.get("loss", "gaussian"), dict(params), entry.get("label", ""))
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, str(exc)) from None
    return {k: entry[k] for k in _FILTER_KEYS if k in entry}


def config_from_dict(doc: dict, overrides: dict | None = None) -> RunConfig:
    """Validate a config document, apply overrides, fill defaults.

    Raises:
        ConfigError: naming the offending key.
    """
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    merged = dict(doc)
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    for key, value in merged.items():
        if key not in _SCHEMA:
            raise ConfigError(key, "unknown key")
        check, expected = _SCHEMA[key]
        if not check(value):
            raise ConfigError(key, f"must be {expected}, got {value!r}")
    if merged.get("filters") is not None:
        merged["filters"] = [_check_filter_entry(i, e) for i, e in enumerate(merged["filters"])]
    bench = BENCHMARKS[merged.get("benchmark", "wiener")]
    merged.setdefault("trials", bench["trials"])
    merged.setdefault("T", bench["T"])
    return RunConfig(**merged)


def parse_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Load a JSON config (an empty file means all defaults) and apply flags."""
    doc = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
        if text.strip():
            try:
                doc = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError("<root>", f"invalid JSON: {exc}") from None
    return config_from_dict(doc, overrides)


def _filter_specs(config: RunConfig):
    """Filter entries with the global overrides applied; ``None`` keeps defaults."""
    if config.filters is None:
        if config.gamma is None and config.derivative_mode is None:
            return None
        entries = [f.to_dict() for f in benchmark_spec(config.benchmark).filters]
    else:
        entries = config.filters
    specs = []
    for e in entries:
        params = dict(e.get("params", {}))
        fid = e["filter"]
        if config.gamma is not None and fid in ("nano", "plf"):
            params["gamma"] = config.gamma
        if config.derivative_mode is not None and fid == "nano":
            params["derivative_mode"] = config.derivative_mode
        specs.append(FilterSpec(fid, e.get("loss", "gaussian"), params, e.get("label", "")))
    return specs


def _format_table(result) -> str:
    lines = [f"{result.spec.name}: {result.spec.trials} trials, T={result.spec.T}"]
    lines.append(f"  {'filter':28s} {'mean':>9s} {'median':>9s} {'q1':>9s} {'q3':>9s} {'fail':>5s} {'ms/step':>8s}")
    for label, e in result.summary.items():
        def fmt(v):
            return f"{v:9.4f}" if v is not None else f"{'-':>9s}"

        ms = f"{e['mean_step_ms']:8.3f}" if e["mean_step_ms"] is not None else f"{'-':>8s}"
        lines.append(
            f"  {label:28s} {fmt(e['mean_rmse'])} {fmt(e['median_rmse'])} {fmt(e['q1_rmse'])} "
            f"{fmt(e['q3_rmse'])} {e['failures']:5d} {ms}"
        )
    return "\n".join(lines)


def cmd_bench(config: RunConfig) -> int:
    try:
        spec = benchmark_spec(
            config.benchmark,
            trials=config.trials,
            seed_base=config.seed,
            T=config.T,
            filters=_filter_specs(config),
            model_params=config.model_params,
            P0=config.P0,
        )
    except ValueError as exc:
        raise ConfigError("benchmark", str(exc)) from None
    result = run_benchmark(spec, workers=config.workers)
    paths = write_reports([result], config.out)
    print(_format_table(result))
    for p in paths:
        print(f"wrote {p}")
    return 0


def read_measurements(path, m: int, k: int = 0):
    """Parse ``t, y1..ym[, u1..uk]``; rows are counted as file lines.

    Raises:
        MalformedInput: with the 1-based line number.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise MalformedInput(0, f"cannot read {path}: {exc.strerror}") from None
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise MalformedInput(1, "missing header")
    expected = ["t"] + [f"y{j + 1}" for j in range(m)] + [f"u{j + 1}" for j in range(k)]
    header = [h.strip() for h in rows[0]]
    if header != expected:
        raise MalformedInput(1, f"header {header} does not match model, expected {expected}")
    ys, us = [], []
    for line, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(expected):
            raise MalformedInput(line, f"expected {len(expected)} fields, got {len(row)}")
        try:
            values = [float(v) for v in row]
        except ValueError as exc:
            raise MalformedInput(line, str(exc)) from None
        if not np.all(np.isfinite(values)):
            raise MalformedInput(line, "non-finite value")
        if values[0] != len(ys) + 1:
            raise MalformedInput(line, f"t must be {len(ys) + 1}, got {row[0]}")
        ys.append(values[1 : 1 + m])
        us.append(values[1 + m :])
    return np.array(ys, dtype=float).reshape(len(ys), m), (np.array(us, dtype=float) if k else None)


def _initial_belief(config: RunConfig, model_id: str, n: int) -> GaussianBelief:
    x0, p0 = MODEL_INITIAL_BELIEF[model_id]
    x0 = np.array(config.x0 if config.x0 is not None else x0, dtype=float)
    p0 = np.array(config.P0 if config.P0 is not None else p0, dtype=float)
    if p0.ndim == 1:
        p0 = np.diag(p0)
    if x0.shape != (n,) or p0.shape != (n, n):
        raise ConfigError("x0", f"initial belief must have dimension {n}")
    return GaussianBelief(x0, p0)


def cmd_filter(config: RunConfig) -> int:
    if config.model is None:
        raise ConfigError("model", "required for the filter command")
    if config.input is None:
        raise ConfigError("input", "required for the filter command")
    try:
        model = build_model(config.model, config.model_params)
        params = dict(config.filter_params)
        params.update(config.loss_params)
        if config.gamma is not None and config.filter in ("nano", "plf"):
            params["gamma"] = config.gamma
        if config.derivative_mode is not None and config.filter == "nano":
            params["derivative_mode"] = config.derivative_mode
        fspec = FilterSpec(config.filter, config.loss, params)
        step = make_stepper(fspec, model)
    except (TypeError, ValueError) as exc:
        raise ConfigError("filter", str(exc)) from None
    belief = _initial_belief(config, config.model, model.n)
    ys, us = read_measurements(config.input, model.m, model.input_dim)
    tr = Trajectory(np.zeros((len(ys) + 1, model.n)), ys, 0, us)
    results = run_filter(step, belief, tr)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n = model.n
    w.writerow(["t"] + [f"mean{i + 1}" for i in range(n)] + [f"var{i + 1}" for i in range(n)] + ["iterations", "step_ms"])
    for t, r in enumerate(results, start=1):
        b = r.posterior
        w.writerow(
            [t]
            + [repr(float(v)) for v in b.mean]
            + [repr(float(v)) for v in np.diagonal(b.covariance)]
            + [r.iterations, f"{1e3 * r.wall_time:.4f}"]
        )
    traces = None
    if config.diagnostics:
        traces = "\n".join(r.trace.to_jsonl(step=t) for t, r in enumerate(results, start=1) if r.trace is not None)
    out = Path(config.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(buf.getvalue())
    if traces is not None:
        out.with_name(out.name + ".trace.jsonl").write_text(traces + ("\n" if traces else ""))
    print(f"filtered {len(results)} steps with {fspec.label}; wrote {out}")
    return 0


def cmd_selftest(config: RunConfig | None = None, rule=None) -> int:
    """Run the health checks; ``rule`` swaps the sigma-point rule under test."""
    from .quadrature import DEFAULT_RULE
    from .selftest import run_selftest

    start = time.perf_counter()
    results = run_selftest(DEFAULT_RULE if rule is None else rule)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    print(f"selftest finished in {time.perf_counter() - start:.1f} s")
    return 0 if all(ok for _, ok, _ in results) else 1


def _key_value(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError("expected KEY=VALUE")
    k, v = text.split("=", 1)
    try:
        return k, float(v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{k}: {v!r} is not a number") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nano", description="Gaussian filtering benchmarks and tools.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--gamma", type=float, help="KL stopping threshold for nano and plf")
        p.add_argument("--derivative-mode", choices=DERIVATIVE_MODES, dest="derivative_mode")

    b = sub.add_parser("bench", help="run a Monte-Carlo benchmark")
    common(b)
    b.add_argument("--benchmark", choices=sorted(BENCHMARKS))
    b.add_argument("--trials", type=int)
    b.add_argument("--T", type=int, dest="T")
    b.add_argument("--seed", type=int)
    b.add_argument("--out", help="output directory")
    b.add_argument("--workers", type=int)

    f = sub.add_parser("filter", help="filter a measurement CSV")
    common(f)
    f.add_argument("--model", choices=MODEL_IDS)
    f.add_argument("--filter", choices=FILTER_IDS)
    f.add_argument("--loss", choices=sorted(LOSS_KINDS))
    f.add_argument("--loss-param", type=_key_value, action="append", default=None, metavar="KEY=VALUE")
    f.add_argument("--input", help="measurement CSV with header t,y1..ym")
    f.add_argument("--out", help="output CSV")
    f.add_argument("--diagnostics", action="store_true", default=None, help="also write NANO traces as JSON lines")

    s = sub.add_parser("selftest", help="run the built-in health checks")
    s.add_argument("--config", help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k not in ("config", "loss_param")}
    if getattr(args, "loss_param", None):
        overrides["loss_params"] = dict(args.loss_param)
    try:
        config = parse_config(args.config, overrides)
        if config.command == "bench":
            return cmd_bench(config)
        if config.command == "filter":
            return cmd_filter(config)
        return cmd_selftest(config)
    except ConfigError as exc:
        print(f"nano: config error: {exc}", file=sys.stderr)
        return 2
    except MalformedInput as exc:
        print(f"nano: malformed input: {exc}", file=sys.stderr)
        return 2
    except FilterError as exc:
        print(f"nano: {type(exc).__module__}.{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
