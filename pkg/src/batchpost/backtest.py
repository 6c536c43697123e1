"""Round-by-round replay of a posting policy against a price series.

Each round one batch arrives, the policy decides how many of the queued
batches to post (FIFO), and the run accumulates posting cost at the
effective price (base fee plus optional tip) and delay cost
c * (queue_after_posting)^2. There is no forced end-of-series flush by
default; stranded batches count toward the delay statistics by their
final age unless configured otherwise.

Batches are unit-size and arrive once per round, so batch k is exactly
the batch created in round k; the FIFO queue is always the contiguous
index window [head, tail).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .core import CostParams, InvalidActionError
from .policies import PolicySpec, QueueView, Trivial, decide
from .price_model import PriceSeries


class AlignmentError(ValueError):
    """tip series length does not match the price series."""


@dataclass(frozen=True)
class BacktestConfig:
    cost_params: CostParams = field(
        default_factory=lambda: CostParams(c=1.0, delta=0.999)
    )
    tip_series: Optional[PriceSeries] = None
    include_unposted_in_delay_stats: bool = True
    flush_at_end: bool = False


@dataclass(frozen=True)
class TraceRow:
    round_index: int
    price: float
    queue_before: int  # queue length after the arrival, before posting
    n_post: int
    posting_cost: float
    delay_cost: float


@dataclass(frozen=True)
class BacktestReport:
    publishing_cost: float
    delay_cost: float
    max_delay: int
    avg_delay: float
    max_posted_in_one_round: int
    rounds: int
    batches_created: int
    batches_posted: int
    final_queue_len: int
    cost_weight: float
    include_unposted_in_delay_stats: bool

    def to_json_dict(self) -> dict:
        return {
            "publishingCost": self.publishing_cost,
            "delayCost": self.delay_cost,
            "maxDelay": self.max_delay,
            "avgDelay": self.avg_delay,
            "maxPostedInOneRound": self.max_posted_in_one_round,
            "rounds": self.rounds,
            "batchesCreated": self.batches_created,
            "batchesPosted": self.batches_posted,
            "finalQueueLen": self.final_queue_len,
            "costWeight": self.cost_weight,
            "includeUnpostedInDelayStats": self.include_unposted_in_delay_stats,
        }


def run_with_trace(
    policy: PolicySpec, series: PriceSeries, config: BacktestConfig = BacktestConfig()
) -> Tuple[BacktestReport, List[TraceRow]]:
    """Replay and also return the per-round trace."""
    return _run(policy, series, config, keep_trace=True)


def run(
    policy: PolicySpec, series: PriceSeries, config: BacktestConfig = BacktestConfig()
) -> BacktestReport:
    report, _ = _run(policy, series, config, keep_trace=False)
    return report


def _run(
    policy: PolicySpec,
    series: PriceSeries,
    config: BacktestConfig,
    keep_trace: bool,
) -> Tuple[BacktestReport, List[TraceRow]]:
    n = len(series)
    prices = series.prices
    if config.tip_series is not None:
        if len(config.tip_series) != n:
            raise AlignmentError(
                f"tip series has {len(config.tip_series)} rounds, prices have {n}"
            )
        effective = prices + config.tip_series.prices
    else:
        effective = prices

    c = config.cost_params.c
    head = 0  # oldest unposted batch index; batch k was created in round k
    publishing = 0.0
    delay_cost = 0.0
    max_delay = 0
    delay_sum = 0
    max_posted = 0
    trace: List[TraceRow] = []

    for i in range(n):
        tail = i + 1
        queue_len = tail - head
        price = float(effective[i])
        if config.flush_at_end and i == n - 1:
            n_post = queue_len
        else:
            view = QueueView(ages=i - np.arange(head, tail))
            n_post = decide(policy, price, view)
        if not 0 <= n_post <= queue_len:
            raise InvalidActionError(
                f"policy returned n_post={n_post} with queue_len={queue_len}"
            )
        if n_post > 0:
            # oldest n_post batches are head..head+n_post-1, posted in round i
            max_delay = max(max_delay, i - head)
            delay_sum += n_post * i - (2 * head + n_post - 1) * n_post // 2
            head += n_post
        remaining = queue_len - n_post
        posting_cost = price * n_post
        round_delay = c * float(remaining * remaining)
        publishing += posting_cost
        delay_cost += round_delay
        max_posted = max(max_posted, n_post)
        if keep_trace:
            trace.append(
                TraceRow(
                    round_index=i,
                    price=price,
                    queue_before=queue_len,
                    n_post=n_post,
                    posting_cost=posting_cost,
                    delay_cost=round_delay,
                )
            )

    posted = head
    final_queue = n - head
    assert posted + final_queue == n, "conservation violated"

    delay_count = posted
    if config.include_unposted_in_delay_stats and final_queue > 0:
        last = n - 1
        ages = last - np.arange(head, n)
        max_delay = max(max_delay, int(ages.max()))
        delay_sum += int(ages.sum())
        delay_count = n
    avg_delay = delay_sum / delay_count if delay_count else 0.0

    report = BacktestReport(
        publishing_cost=publishing,
        delay_cost=delay_cost,
        max_delay=max_delay,
        avg_delay=avg_delay,
        max_posted_in_one_round=max_posted,
        rounds=n,
        batches_created=n,
        batches_posted=posted,
        final_queue_len=final_queue,
        cost_weight=c,
        include_unposted_in_delay_stats=config.include_unposted_in_delay_stats,
    )
    return report, trace


def trivial_baseline(
    series: PriceSeries, config: BacktestConfig = BacktestConfig()
) -> BacktestReport:
    return run(Trivial(), series, config)
