"""Damped synchronous Q-value iteration over (queue, price) states.

States pair a queue length q in [0, max_queue] with a grid price index;
actions post a in [0, q] batches. Tables are initialized to the one-round
cost of each action (initial policy: post everything) and updated with

    Q_new[s,a] = (1-alpha) * Q[s,a] + alpha * (cost(s,a) + delta * E[V(s')])

where V(s') = Q[s', O[s']] uses the policy extracted after the previous
sweep and the expectation runs over the price transition kernel. The
queue moves deterministically to q - a + 1; transitions that would exceed
max_queue contribute a large finite sentinel continuation (those entries
are excluded from the convergence delta). Sweeps are Jacobi-style: the new
table reads only the old one, so results are independent of parallelism.

The converged policy typically shows a threshold structure: below some
price everything is posted; above it there is a price-dependent queue
level below which nothing is posted and above which the queue is posted
down to that level. `analyze_thresholds` extracts and scores it.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import _kernels
from .core import CostParams
from .price_model import PriceGrid, TransitionKernel, index_to_price

SENTINEL_SCALE = 1e12
DEFAULT_TABLE_BYTE_BUDGET = 8 << 30


class SolverResourceError(RuntimeError):
    """Table dimensions exceed the configured memory budget."""


class NonConvergenceError(RuntimeError):
    """max_iterations reached with max_delta still >= epsilon."""

    def __init__(self, values, policy, iterations: int, max_delta: float):
        super().__init__(
            f"no convergence after {iterations} iterations (max_delta={max_delta:g})"
        )
        self.values = values
        self.policy = policy
        self.iterations = iterations
        self.max_delta = max_delta


class ThresholdStructureError(RuntimeError):
    """Threshold-structure violations exceed the tolerated fraction."""

    def __init__(self, summary: "ThresholdSummary", message: str):
        super().__init__(message)
        self.summary = summary


@dataclass(frozen=True)
class SolverConfig:
    """Dimensions, cost parameters, and iteration controls for the solver.

    The grid supplies both the number of price points and the actual GWEI
    values entering the immediate cost.
    """

    grid: PriceGrid
    max_queue: int
    cost_params: CostParams
    alpha: float
    epsilon: float
    max_iterations: int
    table_byte_budget: int = DEFAULT_TABLE_BYTE_BUDGET

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0,1], got {self.alpha}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.max_queue < 1:
            raise ValueError("max_queue must be >= 1")
        if self.num_prices < 2:
            raise ValueError("grid must have >= 2 points")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    @property
    def num_prices(self) -> int:
        return self.grid.num_points

    def table_entries(self) -> int:
        return self.num_prices * (self.max_queue + 1) * (self.max_queue + 2) // 2

    def sentinel(self) -> float:
        """Large finite stand-in for the over-bound continuation cost."""
        p_max = float(np.max(self.grid.prices()))
        max_round_cost = max(
            self.max_queue * p_max, self.cost_params.c * self.max_queue**2
        )
        return SENTINEL_SCALE * max_round_cost


@dataclass
class ValueTable:
    """Ragged cost-to-go table: actions a <= q stored flat per (q, p)."""

    max_queue: int
    num_prices: int
    data: np.ndarray

    @property
    def offsets(self) -> np.ndarray:
        return _kernels.level_offsets(self.max_queue, self.num_prices)

    def actions_at(self, q: int, p: int) -> np.ndarray:
        width = q + 1
        start = self.offsets[q] + p * width
        return self.data[start : start + width]

    def level(self, q: int) -> np.ndarray:
        """View of queue level q as a (num_prices, q+1) matrix."""
        offs = self.offsets
        return self.data[offs[q] : offs[q + 1]].reshape(self.num_prices, q + 1)

    def state_values(self) -> np.ndarray:
        """min over actions, shape (max_queue+1, num_prices)."""
        out = np.empty((self.max_queue + 1, self.num_prices))
        for q in range(self.max_queue + 1):
            out[q] = self.level(q).min(axis=1)
        return out

    def to_json_dict(self) -> dict:
        return {
            "maxQueue": self.max_queue,
            "numPrices": self.num_prices,
            "values": [self.level(q).tolist() for q in range(self.max_queue + 1)],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "ValueTable":
        max_queue = int(data["maxQueue"])
        num_prices = int(data["numPrices"])
        flat = np.concatenate(
            [np.asarray(level, dtype=np.float64).ravel() for level in data["values"]]
        )
        table = cls(max_queue=max_queue, num_prices=num_prices, data=flat)
        if flat.size != table.offsets[-1]:
            raise ValueError("value table payload does not match dimensions")
        return table


@dataclass
class PolicyTable:
    """Chosen action per (queue length, price index)."""

    actions: np.ndarray  # shape (max_queue+1, num_prices), int64

    def __post_init__(self) -> None:
        self.actions = np.asarray(self.actions, dtype=np.int64)
        if self.actions.ndim != 2:
            raise ValueError("policy actions must be 2-d")
        q = np.arange(self.actions.shape[0])[:, None]
        if np.any(self.actions < 0) or np.any(self.actions > q):
            raise ValueError("policy action outside [0, q]")

    @property
    def max_queue(self) -> int:
        return self.actions.shape[0] - 1

    @property
    def num_prices(self) -> int:
        return self.actions.shape[1]

    def to_json_dict(self) -> dict:
        return {
            "maxQueue": self.max_queue,
            "numPrices": self.num_prices,
            "actions": self.actions.tolist(),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "PolicyTable":
        table = cls(actions=np.asarray(data["actions"], dtype=np.int64))
        if table.max_queue != int(data["maxQueue"]) or table.num_prices != int(
            data["numPrices"]
        ):
            raise ValueError("policy table payload does not match dimensions")
        return table

    def to_csv(self) -> str:
        """Matrix CSV: one row per queue length, one column per price index."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["queueLen"] + [f"p{i}" for i in range(self.num_prices)])
        for q in range(self.max_queue + 1):
            writer.writerow([q] + self.actions[q].tolist())
        return buf.getvalue()


@dataclass
class ThresholdSummary:
    """Extracted threshold structure of a policy table.

    threshold_price_index is -1 when even the cheapest price row is not
    post-all. queue_thresholds[p] is -1 for p <= threshold_price_index
    (undefined there).
    """

    threshold_price_index: int
    queue_thresholds: np.ndarray
    fitted_d: float
    fit_residual: float
    linear_fit_residual: float
    checked_states: int
    violations: List[Tuple[int, int, int, int]] = field(default_factory=list)

    @property
    def consistent_fraction(self) -> float:
        if self.checked_states == 0:
            return 1.0
        return 1.0 - len(self.violations) / self.checked_states

    def to_json_dict(self, max_listed: int = 50) -> dict:
        def finite_or_none(x: float):
            return x if math.isfinite(x) else None

        return {
            "thresholdPriceIndex": self.threshold_price_index,
            "queueThresholds": [int(t) for t in self.queue_thresholds],
            "fittedD": finite_or_none(self.fitted_d),
            "fitResidual": finite_or_none(self.fit_residual),
            "linearFitResidual": finite_or_none(self.linear_fit_residual),
            "checkedStates": self.checked_states,
            "violationCount": len(self.violations),
            "consistentFraction": self.consistent_fraction,
            "violations": [list(v) for v in self.violations[:max_listed]],
        }


def init_tables(config: SolverConfig) -> Tuple[ValueTable, PolicyTable]:
    """Tables seeded with one-round costs and the post-everything policy."""
    entries = config.table_entries()
    if entries * 8 > config.table_byte_budget:
        raise SolverResourceError(
            f"value table needs {entries * 8} bytes, budget is {config.table_byte_budget}"
        )
    prices = config.grid.prices()
    c = config.cost_params.c
    values = ValueTable(
        max_queue=config.max_queue,
        num_prices=config.num_prices,
        data=np.empty(entries),
    )
    for q in range(config.max_queue + 1):
        a = np.arange(q + 1)
        rem = q - a
        values.level(q)[:] = prices[:, None] * a[None, :] + c * (rem * rem)[None, :]
    policy = PolicyTable(
        actions=np.tile(
            np.arange(config.max_queue + 1)[:, None], (1, config.num_prices)
        )
    )
    return values, policy


def extract_policy(values: ValueTable) -> PolicyTable:
    """Per-state argmin over actions, ties broken toward the larger action."""
    actions = np.empty((values.max_queue + 1, values.num_prices), dtype=np.int64)
    for q in range(values.max_queue + 1):
        level = values.level(q)
        actions[q] = q - np.argmin(level[:, ::-1], axis=1)
    return PolicyTable(actions=actions)


def _best_values(values: ValueTable, policy: PolicyTable) -> np.ndarray:
    """Q[s, O[s]] per state, shape (max_queue+1, num_prices)."""
    out = np.empty((values.max_queue + 1, values.num_prices))
    offs = values.offsets
    p_idx = np.arange(values.num_prices)
    for q in range(values.max_queue + 1):
        flat = offs[q] + p_idx * (q + 1) + policy.actions[q]
        out[q] = values.data[flat]
    return out


def _max_delta(old: np.ndarray, new: np.ndarray, config: SolverConfig) -> float:
    """Max absolute entry change, ignoring sentinel-fed entries.

    Only (q = max_queue, a = 0) transitions leave the queue bound, so the
    exclusion is the a=0 stride of the last level.
    """
    diff = np.abs(new - old)
    offs = _kernels.level_offsets(config.max_queue, config.num_prices)
    q = config.max_queue
    diff[offs[q] :: q + 1] = 0.0
    return float(diff.max())


def sweep(
    values: ValueTable,
    policy: PolicyTable,
    kernel: TransitionKernel,
    config: SolverConfig,
    dense_kernel: Optional[np.ndarray] = None,
) -> Tuple[ValueTable, float]:
    """One synchronous update; returns the new table and the max entry change.

    Entries fed by the over-bound sentinel are excluded from the delta.
    """
    if kernel.num_rows != config.num_prices:
        raise ValueError("kernel size does not match the price grid")
    if values.max_queue != config.max_queue or values.num_prices != config.num_prices:
        raise ValueError("value table does not match config dimensions")
    if dense_kernel is None and not _kernels.HAVE_NUMBA:
        dense_kernel = kernel.to_dense()
    best = _best_values(values, policy)
    new_data = _kernels.sweep_once(
        values.data,
        best,
        config.grid.prices(),
        dense_kernel if dense_kernel is not None else np.empty((0, 0)),
        kernel.indptr,
        kernel.indices,
        kernel.probs,
        config.max_queue,
        config.cost_params.c,
        config.alpha,
        config.cost_params.delta,
        config.sentinel(),
    )
    max_delta = _max_delta(values.data, new_data, config)
    new_values = ValueTable(
        max_queue=config.max_queue, num_prices=config.num_prices, data=new_data
    )
    return new_values, max_delta


def solve(
    config: SolverConfig, kernel: TransitionKernel
) -> Tuple[ValueTable, PolicyTable, int]:
    """Iterate sweep + policy re-extraction until max_delta < epsilon.

    Raises NonConvergenceError (carrying the partial tables) if
    max_iterations is exhausted first.
    """
    values, policy = init_tables(config)
    dense_kernel = None if _kernels.HAVE_NUMBA else kernel.to_dense()
    max_delta = math.inf
    for iteration in range(1, config.max_iterations + 1):
        values, max_delta = sweep(values, policy, kernel, config, dense_kernel)
        policy = extract_policy(values)
        if max_delta < config.epsilon:
            return values, policy, iteration
    raise NonConvergenceError(values, policy, config.max_iterations, max_delta)


def _sqrt_fit(delta_prices: np.ndarray, t_q: np.ndarray) -> Tuple[float, float]:
    """Least-squares d for T_Q ~ sqrt(P - P_TP) / d; returns (d, rms residual)."""
    x = np.sqrt(delta_prices)
    denom = float(np.dot(x, t_q))
    if denom <= 0:
        return math.inf, float(np.sqrt(np.mean(t_q**2)))
    d = float(np.dot(x, x)) / denom
    resid = t_q - x / d
    return d, float(np.sqrt(np.mean(resid**2)))


def _linear_fit_residual(prices: np.ndarray, t_q: np.ndarray) -> float:
    """RMS residual of the best-fit affine law T_Q ~ m*P + b."""
    coeffs = np.polyfit(prices, t_q, 1)
    resid = t_q - np.polyval(coeffs, prices)
    return float(np.sqrt(np.mean(resid**2)))


def analyze_thresholds(
    policy: PolicyTable,
    grid: PriceGrid,
    exempt_top_fraction: float = 0.0,
    max_violation_fraction: float = 1.0,
) -> ThresholdSummary:
    """Extract T_P, per-price queue thresholds, and the sqrt-law fit.

    T_P is the largest price index such that every cheaper-or-equal price
    row posts the whole queue at every queue length. Above it, T_Q(p) is
    the largest q whose action is 0. Structure violations are states
    (within the non-exempt price range) that break post-all below T_P,
    post-nothing below T_Q, or post-down-to-T_Q above it; if their
    fraction exceeds max_violation_fraction a ThresholdStructureError
    carrying the summary is raised.
    """
    if grid.num_points != policy.num_prices:
        raise ValueError("grid does not match the policy table")
    actions = policy.actions
    max_queue, num_prices = policy.max_queue, policy.num_prices
    q_col = np.arange(max_queue + 1)[:, None]
    post_all_col = np.all(actions == q_col, axis=0)
    t_p = -1
    for p in range(num_prices):
        if post_all_col[p]:
            t_p = p
        else:
            break

    queue_thresholds = np.full(num_prices, -1, dtype=np.int64)
    for p in range(t_p + 1, num_prices):
        zeros = np.nonzero(actions[:, p] == 0)[0]
        queue_thresholds[p] = int(zeros.max()) if zeros.size else 0

    checked_hi = num_prices - int(round(exempt_top_fraction * num_prices))
    checked_hi = max(checked_hi, t_p + 1)
    violations: List[Tuple[int, int, int, int]] = []
    checked = 0
    for p in range(checked_hi):
        if p <= t_p:
            for q in range(max_queue + 1):
                checked += 1
                if actions[q, p] != q:
                    violations.append((q, p, q, int(actions[q, p])))
            continue
        t_q = int(queue_thresholds[p])
        for q in range(max_queue + 1):
            checked += 1
            expected = 0 if q <= t_q else q - t_q
            if actions[q, p] != expected:
                violations.append((q, p, expected, int(actions[q, p])))

    fit_cols = [
        p
        for p in range(t_p + 1, checked_hi)
        if queue_thresholds[p] >= 0
    ]
    if fit_cols:
        prices = np.array([index_to_price(grid, p) for p in fit_cols])
        t_q_vals = queue_thresholds[fit_cols].astype(np.float64)
        base_price = index_to_price(grid, t_p) if t_p >= 0 else grid.p_min
        fitted_d, fit_residual = _sqrt_fit(prices - base_price, t_q_vals)
        linear_residual = (
            _linear_fit_residual(prices, t_q_vals) if len(fit_cols) >= 2 else fit_residual
        )
    else:
        fitted_d, fit_residual, linear_residual = math.nan, math.nan, math.nan

    summary = ThresholdSummary(
        threshold_price_index=t_p,
        queue_thresholds=queue_thresholds,
        fitted_d=fitted_d,
        fit_residual=fit_residual,
        linear_fit_residual=linear_residual,
        checked_states=checked,
        violations=violations,
    )
    if checked and len(violations) / checked > max_violation_fraction:
        raise ThresholdStructureError(
            summary,
            f"{len(violations)}/{checked} states break the threshold structure "
            f"(tolerated fraction {max_violation_fraction})",
        )
    return summary


def monotonicity_check(
    policy: PolicyTable, max_price_index: Optional[int] = None
) -> List[Tuple[str, int, int]]:
    """Adjacent-state pairs violating monotonicity of the policy.

    Reports ("queue", q, p) when action(q+1, p) < action(q, p) and
    ("price", q, p) when action(q, p+1) > action(q, p). Columns at or
    beyond max_price_index (when given) are ignored.
    """
    actions = policy.actions
    hi = policy.num_prices if max_price_index is None else max_price_index
    violations: List[Tuple[str, int, int]] = []
    for q in range(policy.max_queue):
        bad = np.nonzero(actions[q + 1, :hi] < actions[q, :hi])[0]
        violations.extend(("queue", q, int(p)) for p in bad)
    for q in range(policy.max_queue + 1):
        bad = np.nonzero(actions[q, 1:hi] > actions[q, : hi - 1])[0]
        violations.extend(("price", q, int(p)) for p in bad)
    return violations
