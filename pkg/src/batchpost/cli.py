"""Command-line entry point.

Subcommands: ingest, histogram, synth, solve, analyze, backtest, sweep,
dp. Machine output goes to stdout or --out; diagnostics go to stderr.
Exit codes: 0 success, 1 usage error, 2 data error, 3 non-convergence.
Every file artifact gets a sidecar <file>.manifest.json with the resolved
configuration, input digests, tool version, and wall time. JSON machine
output is canonical: sorted keys, floats at 6 significant digits.
Stochastic subcommands require an explicit --seed.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import os
import sys
import time
from typing import Dict, List, Optional

import numpy as np

from . import __version__, _kernels
from .backtest import AlignmentError, BacktestConfig, run, run_with_trace
from .core import CostParams
from .dp_offline import (
    DPInstance,
    brute_force_schedule,
    solve_fixed_prices,
    zero_or_all_fraction,
)
from .ingest import (
    CsvSchema,
    IngestError,
    load_csv,
    ratio_histogram,
    resample_per_minute,
)
from .jsonio import dumps_canonical, format_float
from .policies import Learned, policy_from_json
from .price_model import (
    BLOCK_FACTOR_HI,
    FactorDistribution,
    PriceGrid,
    PriceSeries,
    TransitionKernel,
    block_factor_distribution,
    build_kernel,
    empirical_factor_distribution,
    minute_factor_distribution,
    sample_kernel_path,
    sample_path,
)
from .qsolver import (
    NonConvergenceError,
    PolicyTable,
    SolverConfig,
    ValueTable,
    analyze_thresholds,
    monotonicity_check,
    solve,
)
from .sweep import FAMILY_PARAM_ORDER, ParamGrid, grid_sweep, pareto, row_to_json_dict

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NO_CONVERGENCE = 3

DATA_DIR_ENV = "BATCHPOST_DATA_DIR"

PRESETS: Dict[str, dict] = {
    "micro": dict(
        num_prices=5, pmin=20.0, pmax=100.0, max_queue=4,
        c=1.0, delta=0.9, alpha=1.0, epsilon=1e-6, max_iter=20000,
    ),
    "desk": dict(
        num_prices=40, pmin=10.0, pmax=400.0, max_queue=30,
        c=1.0, delta=0.99, alpha=0.5, epsilon=1e-3, max_iter=50000,
    ),
    "full": dict(
        num_prices=400, pmin=15.0, pmax=6000.0, max_queue=300,
        c=1.0, delta=0.999, alpha=0.1, epsilon=0.01, max_iter=200000,
    ),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # exit 1, not argparse's 2
        raise UsageError(message)


def _resolve_input(path: str) -> str:
    if os.path.exists(path):
        return path
    data_dir = os.environ.get(DATA_DIR_ENV)
    if data_dir:
        candidate = os.path.join(data_dir, path)
        if os.path.exists(candidate):
            return candidate
    return path


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class _Invocation:
    """Collects inputs/outputs so a manifest can sit next to each artifact."""

    def __init__(self, subcommand: str, args: argparse.Namespace):
        self.subcommand = subcommand
        self.args = args
        self.t0 = time.monotonic()
        self.inputs: Dict[str, str] = {}
        self.outputs: List[str] = []

    def note_input(self, path: str) -> str:
        resolved = _resolve_input(path)
        if os.path.exists(resolved):
            self.inputs[resolved] = _sha256(resolved)
        return resolved

    def note_output(self, path: str) -> None:
        self.outputs.append(path)

    def write_manifests(self) -> None:
        if not self.outputs:
            return
        resolved = {
            k: v
            for k, v in sorted(vars(self.args).items())
            if k not in ("func",) and v is not None
        }
        manifest = {
            "subcommand": self.subcommand,
            "config": {k: _jsonable(v) for k, v in resolved.items()},
            "inputs": self.inputs,
            "outputs": list(self.outputs),
            "toolVersion": __version__,
            "backend": _kernels.active_backend(),
            "wallTimeSec": round(time.monotonic() - self.t0, 3),
        }
        for path in self.outputs:
            with open(path + ".manifest.json", "w") as fh:
                fh.write(dumps_canonical(manifest, precision=17))
                fh.write("\n")


def _jsonable(v):
    if isinstance(v, (str, int, float, bool)) or v is None:
        return v
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return str(v)


def _emit(inv: _Invocation, text: str, out: Optional[str]) -> None:
    if out:
        with open(out, "w") as fh:
            fh.write(text)
        inv.note_output(out)
    else:
        sys.stdout.write(text)


def _schema_from_args(args) -> CsvSchema:
    return CsvSchema(fee_col=args.fee_col, ts_col=args.ts_col, unit=args.fee_unit)


def _load_series(inv: _Invocation, args, path: str) -> PriceSeries:
    series = load_csv(inv.note_input(path), _schema_from_args(args))
    if getattr(args, "stride", 1) != 1:
        series = resample_per_minute(series, args.stride)
    return series


def _series_csv(series: PriceSeries) -> str:
    buf = io.StringIO()
    if series.timestamps is not None:
        buf.write("timestamp,fee_gwei\n")
        for ts, fee in zip(series.timestamps, series.prices):
            buf.write(f"{repr(float(ts))},{repr(float(fee))}\n")
    else:
        buf.write("fee_gwei\n")
        for fee in series.prices:
            buf.write(f"{repr(float(fee))}\n")
    return buf.getvalue()


def _add_csv_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ts-col", default="timestamp", help="timestamp column name")
    p.add_argument("--fee-col", default="fee_gwei", help="base-fee column name")
    p.add_argument("--fee-unit", choices=("wei", "gwei"), default="gwei")


def _dist_from_args(args) -> FactorDistribution:
    if args.dist == "block":
        return block_factor_distribution(args.bins)
    return minute_factor_distribution(n_steps=args.steps, n_bins=args.bins)


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_ingest(inv: _Invocation, args) -> int:
    series = _load_series(inv, args, args.prices)
    _emit(inv, _series_csv(series), args.out)
    return EXIT_OK


def _cmd_histogram(inv: _Invocation, args) -> int:
    series = _load_series(inv, args, args.prices)
    hist = ratio_histogram(series, args.bin_width)
    if args.format == "csv":
        buf = io.StringIO()
        buf.write("binStart,binEnd,count\n")
        for i in range(hist.counts.size):
            buf.write(
                f"{format_float(float(hist.bin_edges[i]))},"
                f"{format_float(float(hist.bin_edges[i + 1]))},{int(hist.counts[i])}\n"
            )
        text = buf.getvalue()
    else:
        doc = hist.to_json_dict()
        doc["massAtMaxBlockIncrease"] = hist.mass_in_bin_containing(BLOCK_FACTOR_HI)
        text = dumps_canonical(doc) + "\n"
    _emit(inv, text, args.out)
    return EXIT_OK


def _cmd_synth(inv: _Invocation, args) -> int:
    dist = _dist_from_args(args)
    if args.via_kernel:
        grid = PriceGrid(num_points=args.num_prices, p_min=args.pmin, p_max=args.pmax)
        kernel = build_kernel(grid, dist)
        start = args.start_index
        if start is None:
            start = grid.num_points // 2
        series = sample_kernel_path(kernel, grid, start, args.length, args.seed)
    else:
        series = sample_path(dist, args.p0, args.length, args.seed, floor=args.floor)
    _emit(inv, _series_csv(series), args.out)
    return EXIT_OK


def _solver_config_from_args(args) -> SolverConfig:
    defaults = dict(PRESETS[args.preset]) if args.preset else dict(PRESETS["desk"])
    for key in defaults:
        override = getattr(args, key)
        if override is not None:
            defaults[key] = override
    grid = PriceGrid(
        num_points=int(defaults["num_prices"]),
        p_min=float(defaults["pmin"]),
        p_max=float(defaults["pmax"]),
    )
    return SolverConfig(
        grid=grid,
        max_queue=int(defaults["max_queue"]),
        cost_params=CostParams(c=float(defaults["c"]), delta=float(defaults["delta"])),
        alpha=float(defaults["alpha"]),
        epsilon=float(defaults["epsilon"]),
        max_iterations=int(defaults["max_iter"]),
    )


def _solve_artifact(
    config: SolverConfig,
    values: ValueTable,
    policy: PolicyTable,
    iterations: int,
    converged: bool,
    max_delta: Optional[float],
) -> dict:
    return {
        "config": {
            "maxQueue": config.max_queue,
            "numPrices": config.num_prices,
            "c": config.cost_params.c,
            "delta": config.cost_params.delta,
            "alpha": config.alpha,
            "epsilon": config.epsilon,
            "maxIterations": config.max_iterations,
        },
        "grid": config.grid.to_json_dict(),
        "iterations": iterations,
        "converged": converged,
        "maxDelta": max_delta,
        "policy": policy.to_json_dict(),
        "values": values.to_json_dict(),
    }


def _cmd_solve(inv: _Invocation, args) -> int:
    _kernels.set_num_threads(args.threads)
    config = _solver_config_from_args(args)
    if args.kernel == "synthetic":
        if args.empirical_from:
            series = load_csv(inv.note_input(args.empirical_from), _schema_from_args(args))
            dist = empirical_factor_distribution(series, args.bins)
        else:
            dist = minute_factor_distribution(n_steps=args.steps, n_bins=args.bins)
        kernel = build_kernel(config.grid, dist)
    else:
        import json

        with open(inv.note_input(args.kernel)) as fh:
            kernel = TransitionKernel.from_json_dict(json.load(fh))
    if args.save_kernel:
        with open(args.save_kernel, "w") as fh:
            fh.write(dumps_canonical(kernel.to_json_dict(), precision=17) + "\n")
        inv.note_output(args.save_kernel)

    try:
        values, policy, iterations = solve(config, kernel)
    except NonConvergenceError as exc:
        artifact = _solve_artifact(
            config, exc.values, exc.policy, exc.iterations, False, exc.max_delta
        )
        _emit(inv, dumps_canonical(artifact) + "\n", args.out)
        print(f"batchpost solve: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE

    artifact = _solve_artifact(config, values, policy, iterations, True, None)
    if args.policy_csv:
        with open(args.policy_csv, "w") as fh:
            fh.write(policy.to_csv())
        inv.note_output(args.policy_csv)
    _emit(inv, dumps_canonical(artifact) + "\n", args.out)
    return EXIT_OK


def _load_tables(inv: _Invocation, path: str) -> dict:
    import json

    with open(inv.note_input(path)) as fh:
        return json.load(fh)


def _cmd_analyze(inv: _Invocation, args) -> int:
    artifact = _load_tables(inv, args.tables)
    policy = PolicyTable.from_json_dict(artifact["policy"])
    grid = PriceGrid.from_json_dict(artifact["grid"])
    summary = analyze_thresholds(
        policy,
        grid,
        exempt_top_fraction=args.exempt_top,
        max_violation_fraction=args.max_violation_fraction,
    )
    hi = policy.num_prices - int(round(args.exempt_top * policy.num_prices))
    mono = monotonicity_check(policy, max_price_index=hi)
    doc = summary.to_json_dict()
    doc["monotonicityViolationCount"] = len(mono)
    doc["monotonicityViolations"] = [[kind, q, p] for kind, q, p in mono[:50]]
    doc["exemptTopFraction"] = args.exempt_top
    _emit(inv, dumps_canonical(doc) + "\n", args.out)
    return EXIT_OK


def _policy_from_args(inv: _Invocation, args):
    import json

    sources = [
        s for s in (args.policy, args.policy_file, args.tables) if s is not None
    ]
    if len(sources) != 1:
        raise UsageError("provide exactly one of --policy, --policy-file, --tables")
    if args.policy is not None:
        try:
            doc = json.loads(args.policy)
        except json.JSONDecodeError as exc:
            raise UsageError(f"--policy is not valid JSON: {exc}") from None
        return policy_from_json(doc)
    if args.policy_file is not None:
        with open(inv.note_input(args.policy_file)) as fh:
            return policy_from_json(json.load(fh))
    artifact = _load_tables(inv, args.tables)
    return Learned(
        policy=PolicyTable.from_json_dict(artifact["policy"]),
        grid=PriceGrid.from_json_dict(artifact["grid"]),
    )


def _cmd_backtest(inv: _Invocation, args) -> int:
    policy = _policy_from_args(inv, args)
    series = _load_series(inv, args, args.prices)
    tips = None
    if args.tips:
        tips = load_csv(inv.note_input(args.tips), _schema_from_args(args))
    config = BacktestConfig(
        cost_params=CostParams(c=args.c, delta=0.999),
        tip_series=tips,
        include_unposted_in_delay_stats=not args.exclude_unposted,
        flush_at_end=args.flush_at_end,
    )
    if args.trace:
        report, trace = run_with_trace(policy, series, config)
        with open(args.trace, "w") as fh:
            fh.write("round,price,queueBefore,nPost,postingCost,delayCost\n")
            for row in trace:
                fh.write(
                    f"{row.round_index},{format_float(row.price)},{row.queue_before},"
                    f"{row.n_post},{format_float(row.posting_cost)},"
                    f"{format_float(row.delay_cost)}\n"
                )
        inv.note_output(args.trace)
    else:
        report = run(policy, series, config)
    _emit(inv, dumps_canonical(report.to_json_dict()) + "\n", args.out)
    return EXIT_OK


def _parse_param(text: str) -> tuple:
    if "=" not in text:
        raise UsageError(f"--param must look like name=v1,v2,... got {text!r}")
    name, _, values = text.partition("=")
    try:
        parsed = [float(v) for v in values.split(",") if v != ""]
    except ValueError:
        raise UsageError(f"--param {name}: values must be numbers") from None
    if not parsed:
        raise UsageError(f"--param {name}: no values given")
    return name.strip(), parsed


def _cmd_sweep(inv: _Invocation, args) -> int:
    values = dict(_parse_param(p) for p in args.param or [])
    extra: Dict[str, object] = {}
    if args.family == "qThreshold" and args.variant:
        extra["variant"] = args.variant
    try:
        grid = ParamGrid(family=args.family, values=values, extra=extra)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    series = _load_series(inv, args, args.prices)
    config = BacktestConfig(cost_params=CostParams(c=args.c, delta=0.999))
    rows = grid_sweep(grid, series, config, threads=args.threads)
    pareto(rows)

    if args.format == "json":
        text = dumps_canonical([row_to_json_dict(r) for r in rows]) + "\n"
    else:
        order = list(FAMILY_PARAM_ORDER[args.family])
        buf = io.StringIO()
        header = order + [
            "publishingCost", "delayCost", "maxDelay", "avgDelay",
            "maxPostedInOneRound", "rounds", "batchesPosted", "finalQueueLen",
            "improvementVsTrivialPct", "pareto", "error",
        ]
        buf.write(",".join(header) + "\n")
        for row in rows:
            cells = [format_float(row.params[name]) for name in order]
            if row.report is not None:
                rep = row.report
                cells += [
                    format_float(rep.publishing_cost),
                    format_float(rep.delay_cost),
                    str(rep.max_delay),
                    format_float(rep.avg_delay),
                    str(rep.max_posted_in_one_round),
                    str(rep.rounds),
                    str(rep.batches_posted),
                    str(rep.final_queue_len),
                    format_float(row.improvement_pct),
                    "1" if row.on_frontier else "0",
                    "",
                ]
            else:
                cells += [""] * 9 + ["0", (row.error or "").replace(",", ";")]
            buf.write(",".join(cells) + "\n")
        text = buf.getvalue()
    _emit(inv, text, args.out)
    return EXIT_OK


def _cmd_dp(inv: _Invocation, args) -> int:
    if (args.prices is None) == (args.prices_file is None):
        raise UsageError("provide exactly one of --prices or --prices-file")
    if args.prices is not None:
        try:
            prices = np.array([float(x) for x in args.prices.split(",") if x != ""])
        except ValueError:
            raise UsageError("--prices must be a comma-separated number list") from None
    else:
        series = load_csv(inv.note_input(args.prices_file), _schema_from_args(args))
        prices = series.prices
    instance = DPInstance(prices=prices, c=args.c)
    schedule = solve_fixed_prices(instance)
    doc = {
        "schedule": list(schedule.n_post),
        "totalCost": schedule.total_cost,
        "zeroOrAllFraction": zero_or_all_fraction(schedule),
        "rounds": instance.n,
        "c": args.c,
    }
    if args.oracle:
        oracle = brute_force_schedule(instance)
        doc["oracleCost"] = oracle.total_cost
        doc["oracleMatch"] = bool(oracle.total_cost == schedule.total_cost)
    _emit(inv, dumps_canonical(doc) + "\n", args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> _Parser:
    parser = _Parser(prog="batchpost", description=__doc__)
    parser.add_argument("--version", action="version", version=f"batchpost {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("ingest", help="CSV -> normalized per-round series")
    p.add_argument("--prices", required=True)
    _add_csv_flags(p)
    p.add_argument("--stride", type=int, default=1, help="keep every stride-th point")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("histogram", help="consecutive-ratio histogram data")
    p.add_argument("--prices", required=True)
    _add_csv_flags(p)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--bin-width", type=float, default=0.005)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_histogram)

    p = sub.add_parser("synth", help="sample a synthetic price path")
    p.add_argument("--dist", choices=("block", "minute"), default="minute")
    p.add_argument("--steps", type=int, default=5, help="blocks per round")
    p.add_argument("--bins", type=int, default=256)
    p.add_argument("--p0", type=float, default=100.0)
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--floor", type=float, default=0.0)
    p.add_argument("--via-kernel", action="store_true",
                   help="walk a grid kernel instead of the raw factor law")
    p.add_argument("--num-prices", type=int, default=40)
    p.add_argument("--pmin", type=float, default=10.0)
    p.add_argument("--pmax", type=float, default=400.0)
    p.add_argument("--start-index", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("solve", help="solve the posting MDP on a price kernel")
    p.add_argument("--preset", choices=tuple(PRESETS))
    for flag, typ in (
        ("--num-prices", int), ("--pmin", float), ("--pmax", float),
        ("--max-queue", int), ("--c", float), ("--delta", float),
        ("--alpha", float), ("--epsilon", float), ("--max-iter", int),
    ):
        p.add_argument(flag, type=typ, default=None)
    p.add_argument("--kernel", default="synthetic",
                   help="'synthetic' (minute-law kernel) or a kernel JSON file")
    p.add_argument("--empirical-from",
                   help="build the factor law from this price CSV instead of the minute law")
    _add_csv_flags(p)
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--bins", type=int, default=128)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--save-kernel")
    p.add_argument("--policy-csv", help="also export the policy matrix as CSV")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("analyze", help="threshold structure of a solved policy")
    p.add_argument("--tables", required=True, help="artifact produced by solve")
    p.add_argument("--exempt-top", type=float, default=0.1,
                   help="fraction of top price rows excluded (kernel truncation)")
    p.add_argument("--max-violation-fraction", type=float, default=1.0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("backtest", help="replay one policy over a price series")
    p.add_argument("--policy", help="inline policy JSON")
    p.add_argument("--policy-file", help="policy JSON file")
    p.add_argument("--tables", help="solve artifact used as a learned policy")
    p.add_argument("--prices", required=True)
    _add_csv_flags(p)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--tips", help="aligned tip series CSV (same schema)")
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--exclude-unposted", action="store_true",
                   help="drop stranded batches from delay stats")
    p.add_argument("--flush-at-end", action="store_true")
    p.add_argument("--trace", help="write per-round trace CSV here")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_backtest)

    p = sub.add_parser("sweep", help="back-test a parameter grid")
    p.add_argument("--family", required=True, choices=tuple(FAMILY_PARAM_ORDER))
    p.add_argument("--param", action="append",
                   help="name=v1,v2,... (repeat per parameter)")
    p.add_argument("--variant", choices=("literal", "toThreshold"))
    p.add_argument("--prices", required=True)
    _add_csv_flags(p)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("dp", help="optimal schedule for known fixed prices")
    p.add_argument("--prices", help="inline comma-separated prices")
    p.add_argument("--prices-file")
    _add_csv_flags(p)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--oracle", action="store_true",
                   help="cross-check against exhaustive enumeration (n <= 12)")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_dp)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"batchpost: {exc}", file=sys.stderr)
        return EXIT_USAGE
    inv = _Invocation(args.subcommand, args)
    try:
        code = args.func(inv, args)
        inv.write_manifests()
        return code
    except UsageError as exc:
        print(f"batchpost: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IngestError, AlignmentError, FileNotFoundError) as exc:
        print(f"batchpost: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, KeyError) as exc:
        print(f"batchpost: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
