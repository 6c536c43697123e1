"""Exact optimal posting schedule when all round prices are known upfront.

dp[i][j] holds the minimum cost of publishing exactly j batches over the
first i rounds; the transition from (i, j) posts `take` more in round
i+1 at cost take*price + c*(i+1-j-take)^2, and everything left must be
published in the final round (dp[n][n] is the answer). The recorded take
choices reconstruct the per-round schedule by backtracking.

An exhaustive enumerator over all feasible schedules serves as the
verification oracle for small n. Both paths accumulate per-round costs
with the identical expression in round order, so agreeing optima match
bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import zip_longest
from typing import List, Tuple

import numpy as np

from . import _kernels

BRUTE_FORCE_MAX_ROUNDS = 12


class InstanceSizeError(ValueError):
    """Instance too large for exhaustive enumeration."""


@dataclass(frozen=True)
class DPInstance:
    prices: np.ndarray
    c: float

    def __post_init__(self) -> None:
        prices = np.asarray(self.prices, dtype=np.float64)
        object.__setattr__(self, "prices", prices)
        if prices.ndim != 1 or prices.size < 1:
            raise ValueError("need at least one round price")
        if not np.all(prices > 0):
            raise ValueError("prices must be > 0")
        if not self.c > 0:
            raise ValueError("c must be > 0")

    @property
    def n(self) -> int:
        return int(self.prices.size)


@dataclass(frozen=True)
class Schedule:
    """Per-round posting counts (all n batches posted by the end)."""

    n_post: Tuple[int, ...]
    total_cost: float

    def __post_init__(self) -> None:
        posted = 0
        for i, take in enumerate(self.n_post, start=1):
            posted += take
            if take < 0 or posted > i:
                raise ValueError("schedule posts batches before they exist")
        if posted != len(self.n_post):
            raise ValueError("schedule must post all created batches")


def simulate_schedule(instance: DPInstance, n_post: Tuple[int, ...]) -> float:
    """Total cost of a feasible schedule, accumulated in round order."""
    total = 0.0
    queue = 0
    for i in range(instance.n):
        queue += 1
        take = n_post[i]
        if take < 0 or take > queue:
            raise ValueError(f"round {i}: take {take} exceeds queue {queue}")
        queue -= take
        rem = queue
        total = total + (take * instance.prices[i] + instance.c * float(rem * rem))
    return total


def solve_fixed_prices(instance: DPInstance) -> Schedule:
    """O(n^3) table fill plus backtracking reconstruction.

    Ties in the take choice break toward posting more.
    """
    dp, choice = _kernels.dp_fill(instance.prices, instance.c)
    n = instance.n
    schedule = [0] * n
    s = n
    for i in range(n, 0, -1):
        take = int(choice[i, s])
        schedule[i - 1] = take
        s -= take
    assert s == 0, "backtracking did not consume the schedule"
    total = float(dp[n, n])
    resim = simulate_schedule(instance, tuple(schedule))
    assert resim == total, "schedule re-simulation does not reproduce the DP cost"
    return Schedule(n_post=tuple(schedule), total_cost=total)


def brute_force_schedule(instance: DPInstance) -> Schedule:
    """Exhaustive minimum over all feasible schedules with final flush."""
    n = instance.n
    if n > BRUTE_FORCE_MAX_ROUNDS:
        raise InstanceSizeError(
            f"brute force limited to n <= {BRUTE_FORCE_MAX_ROUNDS}, got {n}"
        )
    prices = instance.prices
    c = instance.c
    best_cost = np.inf
    best_sched: List[int] = []
    sched = [0] * n

    def rec(i: int, queue: int, cost: float) -> None:
        nonlocal best_cost, best_sched
        queue += 1
        if i == n - 1:
            take = queue  # final flush
            total = cost + (take * prices[i] + c * 0.0)
            sched[i] = take
            if total < best_cost:
                best_cost = total
                best_sched = sched.copy()
            return
        for take in range(queue + 1):
            rem = queue - take
            sched[i] = take
            rec(i + 1, rem, cost + (take * prices[i] + c * float(rem * rem)))

    rec(0, 0, 0.0)
    return Schedule(n_post=tuple(best_sched), total_cost=float(best_cost))


def zero_or_all_fraction(schedule: Schedule) -> float:
    """Fraction of rounds posting either nothing or the whole current queue."""
    queue = 0
    hits = 0
    for take in schedule.n_post:
        queue += 1
        if take == 0 or take == queue:
            hits += 1
        queue -= take
    return hits / len(schedule.n_post)


def schedules_equivalent(a: Schedule, b: Schedule) -> bool:
    return a.total_cost == b.total_cost and all(
        x == y for x, y in zip_longest(a.n_post, b.n_post)
    )
