"""Acceptance suite: one test per release criterion, at pinned tolerances.

Each test prints one `[acceptance] criterion N (...): PASS/FAIL` line
(run with `pytest tests/test_acceptance.py -v -s` to see them live).
"""

import io
import json
import math
import os
import subprocess
import sys
import time
from contextlib import redirect_stdout

import numpy as np
import pytest

from batchpost import (
    ArbStep,
    CostParams,
    PriceMin,
    QThreshold,
    Trivial,
    analyze_thresholds,
    brute_force_schedule,
    minute_factor_distribution,
    monotonicity_check,
    percentile,
    run,
    run_with_trace,
    sample_kernel_path,
    sample_path,
    solve_fixed_prices,
    zero_or_all_fraction,
)
from batchpost.cli import main as cli_main
from batchpost.dp_offline import DPInstance
from batchpost.sweep import ParamGrid, grid_sweep

from .oracles import finite_horizon_q_and_gap, finite_horizon_values, horizon_for

FIVE_STEP_LO = 0.875**5
FIVE_STEP_HI = 1.125**5


def check(number: int, name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    suffix = f" [{detail}]" if detail else ""
    print(f"[acceptance] criterion {number} ({name}): {status}{suffix}")
    assert ok, f"criterion {number} ({name}) failed {suffix}"


def random_instances(seed: int = 2024, count: int = 100):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        n = int(rng.integers(1, 9))
        prices = rng.uniform(1.0, 100.0, size=n)
        out.append(DPInstance(prices=prices, c=[0.1, 1.0, 10.0][k % 3]))
    return out


@pytest.fixture(scope="module")
def dp_results():
    instances = random_instances()
    t0 = time.monotonic()
    solved = [(inst, solve_fixed_prices(inst), brute_force_schedule(inst)) for inst in instances]
    return solved, time.monotonic() - t0


def test_criterion_1_dp_oracle_equivalence(dp_results):
    solved, elapsed = dp_results
    mismatches = sum(1 for _, a, b in solved if a.total_cost != b.total_cost)
    check(
        1,
        "DP-oracle exact equivalence",
        mismatches == 0 and elapsed < 60.0,
        f"{mismatches} mismatches over {len(solved)} instances in {elapsed:.2f}s",
    )


def test_criterion_2_zero_or_all(dp_results):
    solved, _ = dp_results
    fractions = [zero_or_all_fraction(a) for _, a, _ in solved]
    hits = sum(1 for f in fractions if f >= 0.9)
    share = hits / len(fractions)
    check(
        2,
        "zero-or-all posting statistic",
        share >= 0.9,
        f"fraction >= 0.9 on {hits}/{len(fractions)} instances",
    )


def micro_mdps():
    """(prices, dense kernel, max_queue) triples with <=5 prices, queue <=4."""
    cases = []
    prices2 = np.array([1.0, 100.0])
    cases.append((prices2, np.array([[0.0, 1.0], [1.0, 0.0]]), 2))
    prices3 = np.array([5.0, 20.0, 80.0])
    k3 = np.array([[0.6, 0.4, 0.0], [0.3, 0.4, 0.3], [0.0, 0.5, 0.5]])
    cases.append((prices3, k3, 3))
    prices5 = np.array([2.0, 8.0, 20.0, 50.0, 120.0])
    k5 = np.zeros((5, 5))
    for i in range(5):
        k5[i, max(0, i - 1)] += 0.45
        k5[i, i] += 0.2
        k5[i, min(4, i + 1)] += 0.35
    cases.append((prices5, k5, 4))
    return cases


def test_criterion_3_solver_oracle_agreement():
    from batchpost import TransitionKernel
    from batchpost.qsolver import SolverConfig, solve
    from batchpost import PriceGrid

    t0 = time.monotonic()
    worst_rel = 0.0
    action_disagreements = 0
    for prices, dense, max_queue in micro_mdps():
        indptr, indices, probs = [0], [], []
        for row in dense:
            cols = np.nonzero(row)[0]
            indices.extend(cols.tolist())
            probs.extend(row[cols].tolist())
            indptr.append(len(indices))
        kernel = TransitionKernel(
            indptr=np.array(indptr), indices=np.array(indices), probs=np.array(probs)
        )
        grid = PriceGrid(len(prices), float(prices[0]), float(prices[-1]))
        # solver consumes the grid's linspace prices; align the MDP to them
        grid_prices = grid.prices()
        assert np.allclose(grid_prices[[0, -1]], prices[[0, -1]])
        delta, c = 0.9, 1.0
        config = SolverConfig(
            grid=grid,
            max_queue=max_queue,
            cost_params=CostParams(c=c, delta=delta),
            alpha=1.0,
            epsilon=1e-7,
            max_iterations=20000,
        )
        values, policy, _ = solve(config, kernel)
        max_cost = max(max_queue * grid_prices.max(), c * max_queue**2)
        horizon = horizon_for(delta, max_cost)
        oracle_v = finite_horizon_values(grid_prices, dense, max_queue, c, delta, horizon)
        got = values.state_values()
        rel = np.abs(got - oracle_v) / np.maximum(np.abs(oracle_v), 1e-9)
        worst_rel = max(worst_rel, float(rel.max()))
        action, gap = finite_horizon_q_and_gap(grid_prices, dense, oracle_v, max_queue, c, delta)
        decisive = gap > 1e-6
        action_disagreements += int(np.sum(policy.actions[decisive] != action[decisive]))
    elapsed = time.monotonic() - t0
    check(
        3,
        "solver-oracle value agreement",
        worst_rel <= 1e-2 and action_disagreements == 0 and elapsed < 120.0,
        f"worst rel err {worst_rel:.2e}, {action_disagreements} action mismatches, {elapsed:.1f}s",
    )


def test_criterion_4_threshold_structure(desk_solution, desk_grid):
    _, policy, _ = desk_solution
    summary = analyze_thresholds(policy, desk_grid, exempt_top_fraction=0.1)
    hi = desk_grid.num_points - int(round(0.1 * desk_grid.num_points))
    mono = monotonicity_check(policy, max_price_index=hi)
    above = summary.queue_thresholds[summary.threshold_price_index + 1 : hi]
    ok = (
        summary.threshold_price_index >= 0
        and np.all(above >= 0)
        and summary.consistent_fraction >= 0.98
        and len(mono) == 0
    )
    check(
        4,
        "threshold structure",
        bool(ok),
        f"T_P index {summary.threshold_price_index}, consistent "
        f"{summary.consistent_fraction:.4f}, {len(mono)} monotonicity violations",
    )


def test_criterion_5_sqrt_fit(desk_solution, desk_grid):
    _, policy, _ = desk_solution
    summary = analyze_thresholds(policy, desk_grid, exempt_top_fraction=0.1)
    fit_ok = (
        math.isfinite(summary.fitted_d)
        and summary.fitted_d > 0
        and math.isfinite(summary.fit_residual)
        and math.isfinite(summary.linear_fit_residual)
    )
    beats_linear = summary.fit_residual < summary.linear_fit_residual
    # gate on successful fit output; the sqrt-vs-linear comparison is
    # informational at this scale (see decisions ledger)
    check(
        5,
        "sqrt-law fit sanity",
        fit_ok,
        f"d={summary.fitted_d:.3f}, sqrt residual {summary.fit_residual:.3f} "
        f"{'<' if beats_linear else '>='} linear residual {summary.linear_fit_residual:.3f}"
        f" (informational comparison {'holds' if beats_linear else 'does not hold'})",
    )


def test_criterion_6_kernel_properties(desk_kernel, minute_dist):
    row_sums_ok = True
    for r in range(desk_kernel.num_rows):
        _, mass = desk_kernel.row(r)
        if abs(float(mass.sum()) - 1.0) > 1e-9 or np.any(mass < 0):
            row_sums_ok = False
    support_ok = (
        minute_dist.factors.min() >= FIVE_STEP_LO
        and minute_dist.factors.max() <= FIVE_STEP_HI
    )
    rng = np.random.default_rng(77)
    idx = rng.choice(
        minute_dist.factors.size, size=1_000_000, p=minute_dist.probs / minute_dist.probs.sum()
    )
    mc_mean = float(minute_dist.factors[idx].mean())
    mean_ok = abs(mc_mean - 1.0) < 1e-3
    median_ok = minute_dist.median() < 1.0
    check(
        6,
        "kernel and factor-law properties",
        row_sums_ok and support_ok and mean_ok and median_ok,
        f"MC mean {mc_mean:.6f}, median {minute_dist.median():.4f}",
    )


def test_criterion_7_backtest_identities(minute_dist):
    ok = True
    details = []
    for seed in range(5):
        series = sample_path(minute_dist, 100.0, 2000, seed=seed, floor=1.0)
        report = run(Trivial(), series)
        expected = 0.0
        for p in series.prices:
            expected += float(p) * 1
        ok &= report.delay_cost == 0.0
        ok &= report.max_delay == 0
        ok &= report.max_posted_in_one_round == 1
        ok &= report.publishing_cost == expected
        # conservation across a mixed bag of policies
        for spec in (PriceMin(T=60), QThreshold(Tp=50, d=1.5), ArbStep(ap=40, e=2, ut=30)):
            rep = run(spec, series)
            ok &= rep.batches_created == rep.batches_posted + rep.final_queue_len
    check(7, "back-test identities", bool(ok))


def test_criterion_8_q_policy_queue_bound(minute_dist):
    spec = QThreshold(Tp=60.0, d=2.0)
    violations = 0
    for seed in range(20):
        series = sample_path(minute_dist, 100.0, 10_000, seed=seed, floor=1.0)
        _, trace = run_with_trace(spec, series)
        max_price = float(series.prices.max())
        bound = math.floor(math.sqrt(max(max_price - 60.0, 0.0)) / 2.0) + 1
        for row in trace:
            if row.queue_before - row.n_post > bound:
                violations += 1
    check(8, "Q-policy global queue bound", violations == 0, f"{violations} violations")


def test_criterion_9_table_orderings(desk_grid, desk_kernel):
    series = sample_kernel_path(desk_kernel, desk_grid, 20, 8000, seed=303)
    t_values = [20.0, 40.0, 60.0, 90.0]
    reports = [run(PriceMin(T=t), series) for t in t_values]
    pubs = [r.publishing_cost for r in reports]
    delays = [r.delay_cost for r in reports]
    price_min_ok = all(b >= a for a, b in zip(pubs, pubs[1:])) and all(
        b <= a for a, b in zip(delays, delays[1:])
    )
    es = [1.2, 1.6, 2.0, 2.8]
    arb_reports = [run(ArbStep(ap=15.0, e=e, ut=30.0), series) for e in es]
    max_delays = [r.max_delay for r in arb_reports]
    arb_ok = all(b <= a for a, b in zip(max_delays, max_delays[1:]))
    check(
        9,
        "historical-table orderings on synthetic data",
        price_min_ok and arb_ok,
        f"PriceMin pubs {pubs}, ArbStep maxDelays {max_delays}",
    )


def test_criterion_10_improvement_harness(desk_grid, desk_kernel):
    series = sample_kernel_path(desk_kernel, desk_grid, 20, 10_000, seed=101)
    grid = ParamGrid(
        family="qThreshold",
        values={"Tp": [12.0, 15.0, 20.0, 30.0], "d": [0.5, 1.0, 2.0]},
    )
    rows = grid_sweep(grid, series)
    winners = [
        r
        for r in rows
        if r.report is not None
        and r.improvement_pct >= 5.0
        and r.report.max_delay < len(series)
    ]
    best = max((r.improvement_pct for r in rows if r.improvement_pct is not None), default=0.0)
    check(
        10,
        "improvement vs trivial",
        len(winners) >= 1,
        f"best improvement {best:.2f}% over {len(rows)} grid points",
    )


def _cli_bytes(argv) -> str:
    buf = io.StringIO()
    with redirect_stdout(buf):
        code = cli_main(argv)
    assert code == 0, f"cli {argv} exited {code}"
    return buf.getvalue()


def test_criterion_11_determinism(tmp_path):
    prices_path = str(tmp_path / "p.csv")
    synth = ["synth", "--dist", "minute", "--length", "400", "--seed", "5",
             "--floor", "1", "--out", prices_path]
    assert cli_main(synth) == 0
    first = open(prices_path).read()
    assert cli_main(synth) == 0
    ok = open(prices_path).read() == first

    for argv in (
        ["backtest", "--policy", '{"kind":"qThreshold","Tp":60,"d":2}', "--prices", prices_path],
        ["dp", "--prices", "3,50,2,9", "--c", "1", "--oracle"],
        ["histogram", "--prices", prices_path, "--bin-width", "0.01"],
        ["sweep", "--family", "priceMin", "--param", "T=40,60", "--prices", prices_path],
    ):
        ok &= _cli_bytes(argv) == _cli_bytes(argv)

    # solve output must be byte-identical across numba thread counts
    outs = []
    for threads in ("1", "2"):
        env = dict(os.environ, NUMBA_NUM_THREADS="2")
        result = subprocess.run(
            [sys.executable, "-m", "batchpost", "solve", "--preset", "micro",
             "--kernel", "synthetic", "--threads", threads],
            env=env, capture_output=True, text=True,
        )
        assert result.returncode == 0, result.stderr
        outs.append(result.stdout)
    ok &= outs[0] == outs[1]
    check(11, "byte-identical determinism", bool(ok))
