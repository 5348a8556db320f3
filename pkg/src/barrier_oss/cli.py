"""Command-line front end: ``barrier-oss <command> [options]``.

Commands: ``price``, ``greeks``, ``sweep``, ``oracle-check``, ``calibrate``.
Settings come from an optional JSON config (``--config``) and are overridden
by flags. Exit codes: 0 success, 2 usage or validation error, 1 runtime
failure (including a failed oracle check).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import engine
from .coco import BENCHMARK_SEED, TRUTH, CalibrationProblem, CoCoSpec, Method, benchmark_targets, calibrate
from .errors import BarrierOssError, ConfigurationError, DomainError, OptimizationError, UnsupportedError
from .fd import FdKind, FdScheme, bump_params, greek_fd
from .model import GradTheta, InstrumentSpec, Knock, ModelParams, PayoffKind
from .oracle import MAX_DIMS, quadrature_value
from .records import write_records

DEFAULT_SEED = 12345
DEFAULT_PATHS = 100_000
ESTIMATOR_CHOICES = ("standard", "oss", "oss_pathwise", "parity", "plain")
PARAM_FIELDS = ("s0", "barrier", "mu", "sigma", "dt", "rate", "strike", "n_obs")
COMMANDS = ("price", "greeks", "sweep", "oracle-check", "calibrate")


class UsageError(BarrierOssError):
    """Invalid command-line or config input (exit code 2)."""


@dataclass
class RunConfig:
    command: str
    params: ModelParams
    spec: InstrumentSpec
    estimator: str = "oss_pathwise"
    n_paths: int = DEFAULT_PATHS
    seed: int = DEFAULT_SEED
    threads: int | None = None
    output_format: str = "csv"
    output_path: str | None = None
    timing: bool = False
    section: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    def flag(self, name):
        return self.flags.get(name)


# ---------------------------------------------------------------------------
# parsing helpers

def _count(text) -> int:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise UsageError(f"expected a path count, got {text!r}") from None
    if not math.isfinite(value) or value != int(value):
        raise UsageError(f"path count must be a whole number, got {text!r}")
    if value < 1:
        raise UsageError(f"path count must be at least 1, got {text!r}")
    return int(value)


def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


def _counts(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [_count(v) for v in text]
    return [_count(v) for v in str(text).split(",") if v.strip()]


def _names(text) -> list[str]:
    if isinstance(text, (list, tuple)):
        return [str(v) for v in text]
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _pick(flag, config: dict, key: str, default=None):
    if flag is not None:
        return flag
    return config.get(key, default)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="barrier-oss", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default: ${engine.THREADS_ENV} or 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--format", dest="output_format", choices=("csv", "json"), default=None)
    common.add_argument("--output", "-o", dest="output_path", default=None, help="output file (default stdout)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--n-paths", dest="n_paths", default=None, help="number of Monte Carlo paths, e.g. 1e5")
    common.add_argument("--timing", action="store_true", help="add wall-clock columns (breaks byte reproducibility)")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--preset", choices=("table1",), default=None, help="start from the built-in parameter set")
    for name in PARAM_FIELDS:
        model.add_argument(f"--{name.replace('_', '-')}", dest=name, type=int if name == "n_obs" else float, default=None)
    model.add_argument("--direction", choices=("up", "down"), default=None)
    model.add_argument("--knock", choices=("out", "in"), default=None)
    model.add_argument("--payoff", dest="payoff_kind", choices=[k.value for k in PayoffKind], default=None)
    model.add_argument("--coupon", type=float, default=None)
    model.add_argument("--delivery", type=float, default=None)

    p = sub.add_parser("price", parents=[common, model], help="price one instrument")
    p.add_argument("--estimator", choices=ESTIMATOR_CHOICES, default=None)

    p = sub.add_parser("greeks", parents=[common, model], help="pathwise Greeks next to CRN finite differences")
    p.add_argument("--fd-scheme", choices=("forward", "central"), default=None)
    p.add_argument("--fd-delta", type=float, default=None, help="bump size (default per parameter)")

    p = sub.add_parser("sweep", parents=[common, model], help="grid sweep or error-vs-paths table")
    p.add_argument("--parameter", choices=[f for f in PARAM_FIELDS if f != "n_obs"], default=None)
    p.add_argument("--start", type=float, default=None)
    p.add_argument("--stop", type=float, default=None)
    p.add_argument("--step", type=float, default=None)
    p.add_argument("--estimators", default=None, help="comma list of standard,oss,oss_pathwise")
    p.add_argument("--n-paths-list", dest="n_paths_list", default=None, help="comma list of path counts")
    p.add_argument("--greek", choices=GradTheta.NAMES, default=None)
    p.add_argument("--fd-scheme", choices=("forward", "central"), default=None)
    p.add_argument("--fd-delta", type=float, default=None)
    p.add_argument("--convergence", action="store_true", help="emit error-vs-paths rows against a reference")
    p.add_argument("--fd-deltas", default=None, help="comma list of bumps for --convergence")
    p.add_argument("--reference-paths", default=None, help="pathwise benchmark size when no quadrature oracle applies")

    p = sub.add_parser("oracle-check", parents=[common, model], help="compare OSS estimates with quadrature")
    p.add_argument("--suite", action="store_true",
                   help="run up-out, down-out and digital up-in for 1, 2 and 3 dates")

    p = sub.add_parser("calibrate", parents=[common], help="fit (barrier, sigma) of the CoCo bonds")
    p.add_argument("--method", choices=[m.value for m in Method], default=None)
    p.add_argument("--estimator", choices=("oss", "standard"), default=None)
    p.add_argument("--initial", default=None, help="barrier,sigma start point")
    p.add_argument("--targets", default=None, help="comma list of target prices (default: benchmark)")
    p.add_argument("--truth", default=None, help="barrier,sigma used for benchmark targets")
    p.add_argument("--benchmark-paths", dest="benchmark_paths", default=None)
    p.add_argument("--benchmark-seed", dest="benchmark_seed", type=int, default=None)
    p.add_argument("--n-paths-list", dest="n_paths_list", default=None, help="matrix run over path counts")
    p.add_argument("--max-iter", dest="max_iter", type=int, default=None)
    return parser


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    return data


def _model_from(args, config: dict) -> tuple[ModelParams, InstrumentSpec]:
    preset = getattr(args, "preset", None) or config.get("preset", "table1")
    if preset != "table1":
        raise UsageError(f"unknown preset {preset!r}")
    values = ModelParams.table1().to_dict()
    values.update(config.get("params", {}))
    for name in PARAM_FIELDS:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    unknown = set(values) - set(PARAM_FIELDS)
    if unknown:
        raise UsageError(f"unknown model parameters: {sorted(unknown)}")
    params = ModelParams(**values)
    inst = {"direction": "up", "knock": "out", "payoff_kind": "vanilla_call"}
    inst.update(config.get("instrument", {}))
    for name in ("direction", "knock", "payoff_kind", "coupon", "delivery"):
        flag = getattr(args, name, None)
        if flag is not None:
            inst[name] = flag
    return params, InstrumentSpec(**inst)


def resolve(args) -> RunConfig:
    config = _load_config(args.config)
    if "command" in config and config["command"] != args.command:
        raise UsageError(f"config is for command {config['command']!r}, not {args.command!r}")
    output = config.get("output", {})
    if args.command == "calibrate":
        params, spec = ModelParams.table1(), InstrumentSpec()
    else:
        params, spec = _model_from(args, config)
    estimator = _pick(getattr(args, "estimator", None), config, "estimator", "oss_pathwise")
    if args.command == "price" and estimator not in ESTIMATOR_CHOICES:
        raise UsageError(f"unknown estimator {estimator!r}; choose from {', '.join(ESTIMATOR_CHOICES)}")
    threads = args.threads if args.threads is not None else config.get("threads")
    fmt = _pick(args.output_format, output, "format", "csv")
    if fmt not in ("csv", "json"):
        raise UsageError(f"unknown output format {fmt!r}")
    return RunConfig(
        command=args.command,
        params=params,
        spec=spec,
        estimator=estimator,
        n_paths=_count(_pick(args.n_paths, config, "n_paths", DEFAULT_PATHS)),
        seed=int(_pick(args.seed, config, "seed", DEFAULT_SEED)),
        threads=threads,
        output_format=fmt,
        output_path=_pick(args.output_path, output, "path"),
        timing=bool(args.timing or config.get("timing", False)),
        section=config.get(args.command.replace("-", "_"), {}),
        flags=vars(args),
    )


# ---------------------------------------------------------------------------
# commands

def _estimate(cfg: RunConfig, params: ModelParams, estimator: str, n: int, keep_samples=False):
    spec = cfg.spec
    if estimator == "plain":
        return engine.plain_pathwise(params, spec.payoff_kind, n, cfg.seed, delivery=spec.delivery,
                                     threads=cfg.threads, keep_samples=keep_samples)
    return engine.ESTIMATORS[estimator](params, spec, n, cfg.seed, threads=cfg.threads, keep_samples=keep_samples)


def _grad_cells(out) -> dict:
    row = {}
    for name in GradTheta.NAMES:
        row["d_" + name] = None if out.greeks is None else out.greeks[name]
        row["se_" + name] = None if out.greek_stderr is None else out.greek_stderr[name]
    return row


def run_price(cfg: RunConfig) -> int:
    out = _estimate(cfg, cfg.params, cfg.estimator, cfg.n_paths)
    row = {
        "estimator": cfg.estimator, "seed": cfg.seed, "n_paths": cfg.n_paths,
        **cfg.spec.to_dict(), **cfg.params.to_dict(),
        "pv": out.pv, "pv_stderr": out.pv_stderr, **_grad_cells(out), "elapsed": out.elapsed,
    }
    write_records(cfg.output_path, "price", [row], cfg.output_format, cfg.timing)
    return 0


def _pathwise_route(spec: InstrumentSpec) -> str:
    if spec.knock is Knock.IN and spec.payoff_kind is not PayoffKind.DIGITAL:
        return "parity"
    return "oss_pathwise"


def _fd_pricer(route: str):
    return engine.price_knock_in_parity if route == "parity" else engine.price_oss


def run_greeks(cfg: RunConfig) -> int:
    sec = cfg.section
    scheme = FdScheme(_pick(cfg.flag("fd_scheme"), sec, "fd_scheme", "central"),
                      _pick(cfg.flag("fd_delta"), sec, "fd_delta", None))
    route = _pathwise_route(cfg.spec)
    for name in GradTheta.NAMES:
        # fail on an out-of-domain bump before any simulation
        bump_params(cfg.params, name, -scheme.step_for(name) if scheme.kind is FdKind.CENTRAL else 0.0)
    pw = _estimate(cfg, cfg.params, route, cfg.n_paths)
    rows = []
    for name in GradTheta.NAMES:
        fd = greek_fd(_fd_pricer(route), cfg.params, name, scheme, cfg.n_paths, cfg.seed, cfg.spec,
                      threads=cfg.threads)
        rows.append({
            "seed": cfg.seed, "n_paths": cfg.n_paths, "direction": cfg.spec.direction.value,
            "knock": cfg.spec.knock.value, "payoff_kind": cfg.spec.payoff_kind.value, "parameter": name,
            "pathwise": pw.greeks[name], "pathwise_stderr": pw.greek_stderr[name],
            "fd": fd.value, "fd_stderr": fd.stderr, "fd_scheme": scheme.kind.value, "fd_delta": scheme.step_for(name),
        })
    write_records(cfg.output_path, "greeks", rows, cfg.output_format, cfg.timing)
    return 0


def grid_values(start: float, stop: float, step: float) -> list[float]:
    if not step > 0:
        raise UsageError("sweep step must be positive")
    if stop < start:
        raise UsageError("sweep stop must not be below start")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 12) for i in range(count)]


def sweep_rows(cfg: RunConfig, parameter: str, values, estimators, counts, greek: str, scheme: FdScheme) -> list[dict]:
    rows = []
    for n in counts:
        for est in estimators:
            if est not in ("standard", "oss", "oss_pathwise"):
                raise UsageError(f"sweep estimator must be standard, oss or oss_pathwise, got {est!r}")
            fd_pricer = engine.price_standard_mc if est == "standard" else engine.price_oss
            for value in values:
                params = replace(cfg.params, **{parameter: value})
                out = _estimate(cfg, params, est, n)
                fd = greek_fd(fd_pricer, params, greek, scheme, n, cfg.seed, cfg.spec, threads=cfg.threads)
                rows.append({
                    "estimator": est, "seed": cfg.seed, "n_paths": n, "parameter": parameter, "value": value,
                    "pv": out.pv, "pv_stderr": out.pv_stderr, "greek": greek,
                    "greek_pathwise": None if out.greeks is None else out.greeks[greek],
                    "greek_pathwise_stderr": None if out.greek_stderr is None else out.greek_stderr[greek],
                    "greek_fd": fd.value, "fd_scheme": scheme.kind.value, "fd_delta": scheme.step_for(greek),
                    "elapsed": out.elapsed,
                })
    return rows


def convergence_rows(cfg: RunConfig, counts, greek: str, deltas, reference_paths: int) -> list[dict]:
    if cfg.params.n_obs <= MAX_DIMS:
        reference = quadrature_value(cfg.params, cfg.spec)[1][greek]
    else:
        reference = engine.price_oss_pathwise(cfg.params, cfg.spec, reference_paths, cfg.seed + 1,
                                              threads=cfg.threads).greeks[greek]
    rows = []
    for n in counts:
        pw = engine.price_oss_pathwise(cfg.params, cfg.spec, n, cfg.seed, threads=cfg.threads)
        rows.append({"seed": cfg.seed, "n_paths": n, "greek": greek, "method": "pathwise", "fd_delta": None,
                     "estimate": pw.greeks[greek], "stderr": pw.greek_stderr[greek], "reference": reference,
                     "abs_error": abs(pw.greeks[greek] - reference), "elapsed": pw.elapsed})
        for delta in deltas:
            started = time.perf_counter()
            fd = greek_fd(engine.price_oss, cfg.params, greek, FdScheme(FdKind.FORWARD, delta), n, cfg.seed,
                          cfg.spec, threads=cfg.threads)
            rows.append({"seed": cfg.seed, "n_paths": n, "greek": greek, "method": "fd_forward", "fd_delta": delta,
                         "estimate": fd.value, "stderr": fd.stderr, "reference": reference,
                         "abs_error": abs(fd.value - reference), "elapsed": time.perf_counter() - started})
    return rows


def run_sweep(cfg: RunConfig) -> int:
    sec = cfg.section
    greek = _pick(cfg.flag("greek"), sec, "greek", "s0")
    counts = _counts(_pick(cfg.flag("n_paths_list"), sec, "n_paths", [cfg.n_paths]))
    if cfg.flag("convergence") or sec.get("convergence", False):
        deltas = _floats(_pick(cfg.flag("fd_deltas"), sec, "fd_deltas", [1e-1, 1e-2, 1e-3]))
        ref_n = _count(_pick(cfg.flag("reference_paths"), sec, "reference_paths", 10_000_000))
        rows = convergence_rows(cfg, counts, greek, deltas, ref_n)
        write_records(cfg.output_path, "convergence", rows, cfg.output_format, cfg.timing)
        return 0
    parameter = _pick(cfg.flag("parameter"), sec, "parameter", "s0")
    start = _pick(cfg.flag("start"), sec, "start", 40.0)
    stop = _pick(cfg.flag("stop"), sec, "stop", 60.0)
    step = _pick(cfg.flag("step"), sec, "step", 0.5)
    estimators = _names(_pick(cfg.flag("estimators"), sec, "estimators", ["standard", "oss", "oss_pathwise"]))
    scheme = FdScheme(_pick(cfg.flag("fd_scheme"), sec, "fd_scheme", "forward"),
                      _pick(cfg.flag("fd_delta"), sec, "fd_delta", None))
    rows = sweep_rows(cfg, parameter, grid_values(start, stop, step), estimators, counts, greek, scheme)
    write_records(cfg.output_path, "sweep", rows, cfg.output_format, cfg.timing)
    return 0


def suite_cases(params: ModelParams):
    """Scaled-down cases: one-year horizon split into 1, 2 or 3 dates."""
    cases = []
    for n_obs in (1, 2, 3):
        base = replace(params, n_obs=n_obs, dt=1.0 / n_obs)
        cases.append((base, InstrumentSpec("up", "out", "vanilla_call")))
        cases.append((replace(base, barrier=40.0), InstrumentSpec("down", "out", "vanilla_call")))
        cases.append((base, InstrumentSpec("up", "in", "digital", coupon=1.0)))
    return cases


def oracle_rows(params: ModelParams, spec: InstrumentSpec, n: int, seed: int, threads=None) -> list[dict]:
    mc = engine.price_oss_pathwise(params, spec, n, seed, threads=threads)
    pv, grad = quadrature_value(params, spec)
    quantities = [("pv", mc.pv, mc.pv_stderr, pv)]
    quantities += [(name, mc.greeks[name], mc.greek_stderr[name], grad[name]) for name in GradTheta.NAMES]
    rows = []
    for name, est, se, ref in quantities:
        # deterministic estimators (zero spread) are held to rounding level
        tol = max(3.0 * se, 1e-10 * max(1.0, abs(ref)))
        z = (est - ref) / se if se > 0 else (0.0 if est == ref else math.inf)
        rows.append({
            "seed": seed, "n_paths": n, "direction": spec.direction.value, "knock": spec.knock.value,
            "payoff_kind": spec.payoff_kind.value, "n_obs": params.n_obs, "quantity": name,
            "monte_carlo": est, "stderr": se, "oracle": ref, "z_score": z, "within_3se": abs(est - ref) <= tol,
        })
    return rows


def run_oracle_check(cfg: RunConfig) -> int:
    suite = cfg.flag("suite") or cfg.section.get("suite", False)
    cases = suite_cases(cfg.params) if suite else [(cfg.params, cfg.spec)]
    rows = []
    for params, spec in cases:
        rows += oracle_rows(params, spec, cfg.n_paths, cfg.seed, cfg.threads)
    write_records(cfg.output_path, "oracle", rows, cfg.output_format, cfg.timing)
    failed = [r for r in rows if not r["within_3se"]]
    for r in failed:
        print(f"oracle mismatch: {r['direction']}-{r['knock']} {r['payoff_kind']} T={r['n_obs']} "
              f"{r['quantity']}: {r['monte_carlo']!r} vs {r['oracle']!r} (z={r['z_score']:.2f})", file=sys.stderr)
    return 1 if failed else 0


def _pair(text, what) -> tuple[float, float]:
    values = _floats(text)
    if len(values) != 2:
        raise UsageError(f"{what} needs two values (barrier,sigma)")
    return values[0], values[1]


def _trace_path(path, fmt):
    if path is None or path == "-":
        return path
    p = Path(path)
    return str(p.with_name(p.stem + ".trace" + (p.suffix or (".csv" if fmt == "csv" else ".jsonl"))))


def run_calibrate(cfg: RunConfig) -> int:
    sec = cfg.section
    specs = [CoCoSpec(**item) for item in sec.get("instruments", [])] or CoCoSpec.table2()
    targets = cfg.flag("targets") or sec.get("targets")
    if targets is not None:
        targets = _floats(targets)
        if len(targets) != len(specs):
            raise UsageError(f"{len(targets)} targets given for {len(specs)} instruments")
    initial = _pair(_pick(cfg.flag("initial"), sec, "initial", [0.5, 0.5]), "initial point")
    if not initial[1] > 0:
        raise UsageError(f"initial sigma must be positive, got {initial[1]}")
    bounds = tuple(tuple(b) for b in sec.get("bounds", ((0.01, 0.6), (0.01, 2.0))))
    method = _pick(cfg.flag("method"), sec, "method", "gauss_newton_pathwise")
    estimator = _pick(cfg.flag("estimator"), sec, "estimator", "oss")
    counts = _counts(_pick(cfg.flag("n_paths_list"), sec, "n_paths", [cfg.n_paths]))
    runs = sec.get("runs", [{"method": method, "estimator": estimator}])
    if cfg.flag("method") or cfg.flag("estimator"):
        runs = [{"method": method, "estimator": estimator}]

    # validate every cell before spending time on benchmark targets
    problems = []
    for run in runs:
        for n in counts:
            try:
                problems.append(CalibrationProblem(
                    [(s, 0.0) for s in specs], initial=initial, bounds=bounds, n_paths=n, seed=cfg.seed,
                    method=run["method"], estimator=run.get("estimator", "oss"), threads=cfg.threads))
            except ValueError as exc:
                raise UsageError(str(exc)) from None
    if targets is None:
        truth = _pair(_pick(cfg.flag("truth"), sec, "truth", list(TRUTH)), "truth")
        bench_n = _count(_pick(cfg.flag("benchmark_paths"), sec, "benchmark_paths", 10_000_000))
        bench_seed = int(_pick(cfg.flag("benchmark_seed"), sec, "benchmark_seed", BENCHMARK_SEED))
        targets = benchmark_targets(specs, truth, bench_n, bench_seed, threads=cfg.threads)

    max_iter = _pick(cfg.flag("max_iter"), sec, "max_iter", None)
    rows, trace_rows, status = [], [], 0
    for problem in problems:
        problem.instruments = list(zip(specs, targets))
        ident = {"method": problem.method.value, "estimator": problem.estimator, "seed": problem.seed,
                 "n_paths": problem.n_paths}
        try:
            result = calibrate(problem, max_iter=max_iter)
        except OptimizationError as exc:
            status = 1
            print(f"calibration failed ({ident['method']}, n={problem.n_paths}): {exc}", file=sys.stderr)
            trace_rows += [{**ident, "iteration": e.iteration, "barrier": e.x[0], "sigma": e.x[1],
                            "residual_norm": e.residual_norm} for e in exc.trace]
            continue
        rows.append({**ident, "initial_barrier": initial[0], "initial_sigma": initial[1],
                     "barrier": result.fitted[0], "sigma": result.fitted[1], "data_fit": result.data_fit,
                     "iterations": result.iterations, "evaluations": result.evaluations,
                     "converged": result.converged, "message": result.message, "runtime": result.runtime})
        trace_rows += [{**ident, "iteration": e.iteration, "barrier": e.x[0], "sigma": e.x[1],
                        "residual_norm": e.residual_norm} for e in result.trace]
    write_records(cfg.output_path, "calibration", rows, cfg.output_format, cfg.timing)
    if cfg.output_path not in (None, "-"):
        write_records(_trace_path(cfg.output_path, cfg.output_format), "calibration_trace", trace_rows,
                      cfg.output_format, cfg.timing)
    return status


HANDLERS = {
    "price": run_price,
    "greeks": run_greeks,
    "sweep": run_sweep,
    "oracle-check": run_oracle_check,
    "calibrate": run_calibrate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(args)
        return HANDLERS[args.command](cfg)
    except (UsageError, ConfigurationError, DomainError, UnsupportedError) as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except BarrierOssError as exc:
        print(f"{parser.prog}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
