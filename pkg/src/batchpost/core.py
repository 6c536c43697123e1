"""Round cost model, queue dynamics, and shared record types.

One batch is created per round. A decision posts `n_post` of the
`queue_len` queued batches at the current price; the round costs

    posting + delay = price * n_post + c * (queue_len - n_post)**2

and the queue then steps to `queue_len - n_post + 1`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional


class InvalidActionError(ValueError):
    """Raised when a posting decision violates 0 <= n_post <= queue_len."""


@dataclass(frozen=True)
class CostParams:
    """Delay-cost weight c and per-round discount factor delta."""

    c: float
    delta: float

    def __post_init__(self) -> None:
        if not self.c > 0:
            raise ValueError(f"delay weight c must be > 0, got {self.c}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"discount delta must be in (0,1), got {self.delta}")


@dataclass(frozen=True)
class RoundCost:
    posting: float
    delay: float
    total: float


@dataclass(frozen=True)
class SimState:
    """Queue length and posting price characterizing one round."""

    queue_len: int
    price: float

    def __post_init__(self) -> None:
        if self.queue_len < 0:
            raise ValueError(f"queue_len must be >= 0, got {self.queue_len}")
        if not self.price > 0:
            raise ValueError(f"price must be > 0, got {self.price}")


@dataclass
class BatchRecord:
    """FIFO bookkeeping for a single batch: creation and posting rounds."""

    created_round: int
    posted_round: Optional[int] = None

    def __post_init__(self) -> None:
        if self.posted_round is not None and self.posted_round < self.created_round:
            raise ValueError("posted_round must be >= created_round")


def _check_action(queue_len: int, n_post: int) -> None:
    if n_post < 0 or n_post > queue_len:
        raise InvalidActionError(
            f"n_post={n_post} outside [0, queue_len={queue_len}]"
        )


def round_cost(price: float, queue_len: int, n_post: int, c: float) -> RoundCost:
    """Cost of posting n_post of queue_len batches at the given price.

    posting = price * n_post, delay = c * (queue_len - n_post)**2.
    """
    if not price > 0:
        raise ValueError(f"price must be > 0, got {price}")
    if not c > 0:
        raise ValueError(f"c must be > 0, got {c}")
    _check_action(queue_len, n_post)
    rem = queue_len - n_post
    posting = price * n_post
    delay = c * float(rem * rem)
    return RoundCost(posting=posting, delay=delay, total=posting + delay)


def step_queue(queue_len: int, n_post: int) -> int:
    """Next-round queue length: queue_len - n_post + 1 (one new arrival)."""
    _check_action(queue_len, n_post)
    return queue_len - n_post + 1


def validate_decision(state: SimState, n_post: int) -> bool:
    """True iff 0 <= n_post <= state.queue_len."""
    return 0 <= n_post <= state.queue_len


def myopic_argmin(price: float, queue_len: int, c: float) -> int:
    """One-round cost-minimizing action, ties broken toward posting more.

    The total a*price + c*(queue_len-a)**2 is convex in a, so the scan is
    cheap for the queue sizes in play; callers needing bulk evaluation use
    the solver tables instead.
    """
    best_a = 0
    best = round_cost(price, queue_len, 0, c).total
    for a in range(1, queue_len + 1):
        total = round_cost(price, queue_len, a, c).total
        if total <= best:
            best = total
            best_a = a
    return best_a
