"""Parameter-grid back-testing, Pareto extraction, improvement metrics.

A ParamGrid is a policy family plus per-parameter value lists; the sweep
runs one back-test per point of the cartesian product (axes in the
family's canonical field order, values in the given order). Failures at
individual grid points are captured per row so one bad parameterization
cannot abort a large sweep.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from typing import Dict, List, Optional, Sequence

from .backtest import BacktestConfig, BacktestReport, run, trivial_baseline
from .policies import PolicySpec, policy_from_json, policy_to_json
from .price_model import PriceSeries

FAMILY_PARAM_ORDER: Dict[str, Sequence[str]] = {
    "trivial": (),
    "priceMin": ("T",),
    "qThreshold": ("Tp", "d"),
    "arbStep": ("e", "ap", "ut"),
    "arbSmooth": ("e", "ap", "ut"),
}


@dataclass(frozen=True)
class ParamGrid:
    family: str
    values: Dict[str, Sequence[float]] = field(default_factory=dict)
    extra: Dict[str, object] = field(default_factory=dict)  # fixed fields, e.g. variant

    def __post_init__(self) -> None:
        if self.family not in FAMILY_PARAM_ORDER:
            raise ValueError(f"unknown policy family {self.family!r}")
        order = FAMILY_PARAM_ORDER[self.family]
        unknown = set(self.values) - set(order)
        if unknown:
            raise ValueError(f"parameters {sorted(unknown)} not in family {self.family}")
        for name in order:
            if name not in self.values or len(self.values[name]) == 0:
                raise ValueError(f"missing values for parameter {name!r}")

    def points(self) -> List[Dict[str, float]]:
        order = FAMILY_PARAM_ORDER[self.family]
        if not order:
            return [{}]
        axes = [self.values[name] for name in order]
        return [dict(zip(order, combo)) for combo in product(*axes)]


@dataclass
class SweepRow:
    params: Dict[str, float]
    spec: Optional[PolicySpec]
    report: Optional[BacktestReport]
    error: Optional[str] = None
    improvement_pct: Optional[float] = None
    on_frontier: bool = False


@dataclass
class ParetoFrontier:
    rows: List[SweepRow]


def _build_spec(grid: ParamGrid, params: Dict[str, float]) -> PolicySpec:
    doc = {"kind": grid.family, **grid.extra, **params}
    return policy_from_json(doc)


def grid_sweep(
    grid: ParamGrid,
    series: PriceSeries,
    config: BacktestConfig = BacktestConfig(),
    threads: int = 1,
) -> List[SweepRow]:
    """One back-test per grid point, in deterministic grid order."""
    rows: List[SweepRow] = []
    for params in grid.points():
        try:
            spec = _build_spec(grid, params)
            rows.append(SweepRow(params=params, spec=spec, report=None))
        except (ValueError, KeyError) as exc:
            rows.append(SweepRow(params=params, spec=None, report=None, error=str(exc)))

    def run_row(row: SweepRow) -> None:
        if row.spec is None:
            return
        try:
            row.report = run(row.spec, series, config)
        except Exception as exc:  # fault isolation per row
            row.error = str(exc)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_row, rows))
    else:
        for row in rows:
            run_row(row)

    baseline = trivial_baseline(series, config)
    for row in rows:
        if row.report is not None:
            row.improvement_pct = improvement_vs_trivial(row.report, baseline)
    return rows


def pareto(rows: List[SweepRow]) -> ParetoFrontier:
    """Two-objective minimization frontier over (publishing, delay) costs.

    Duplicated points keep one representative (first in grid order);
    frontier rows are returned by ascending publishing cost and flagged
    in place via on_frontier.
    """
    candidates = [
        (row.report.publishing_cost, row.report.delay_cost, i, row)
        for i, row in enumerate(rows)
        if row.report is not None
    ]
    candidates.sort(key=lambda t: (t[0], t[1], t[2]))
    frontier: List[SweepRow] = []
    best_delay = float("inf")
    for pub, delay, _, row in candidates:
        row.on_frontier = False
        if delay < best_delay:
            frontier.append(row)
            row.on_frontier = True
            best_delay = delay
    return ParetoFrontier(rows=frontier)


def improvement_vs_trivial(
    report: BacktestReport, trivial_report: BacktestReport
) -> float:
    """Publishing-cost saving vs the post-immediately baseline, in percent."""
    if not trivial_report.publishing_cost > 0:
        raise ZeroDivisionError("trivial publishing cost must be > 0")
    return (
        100.0
        * (trivial_report.publishing_cost - report.publishing_cost)
        / trivial_report.publishing_cost
    )


def row_to_json_dict(row: SweepRow) -> dict:
    doc: dict = {
        "params": dict(row.params),
        "policy": policy_to_json(row.spec) if row.spec is not None else None,
        "error": row.error,
        "pareto": row.on_frontier,
        "improvementVsTrivialPct": row.improvement_pct,
    }
    doc["report"] = row.report.to_json_dict() if row.report is not None else None
    return doc
