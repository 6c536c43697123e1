"""Back-testable posting rules under one decide() interface.

Five families: Trivial posts everything immediately; PriceMin posts the
whole queue once the price is at or below a threshold; QThreshold posts
all below a price threshold and otherwise posts the queue down to a
sqrt-of-price level; ArbStep/ArbSmooth give every batch an acceptable
price that escalates with its age (step doubling vs smooth exponential);
Learned wraps a solver policy table.

All rules are stationary in (price, queue) except the age-based Arbitrum
family, which receives per-batch ages. Decisions always satisfy
0 <= n_post <= queue length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .ingest import percentile
from .price_model import PriceGrid, PriceSeries, price_to_index
from .qsolver import PolicyTable


@dataclass(frozen=True)
class Trivial:
    """Post every batch immediately."""


@dataclass(frozen=True)
class PriceMin:
    """Wait until the price drops to T, then post everything."""

    T: float

    def __post_init__(self) -> None:
        if not self.T > 0:
            raise ValueError("T must be > 0")


@dataclass(frozen=True)
class QThreshold:
    """Post all below Tp; above, keep the queue near sqrt(price - Tp)/d.

    variant "literal" posts queue - t - 1 (t = floor(sqrt(price-Tp)/d)),
    variant "toThreshold" posts queue - t.
    """

    Tp: float
    d: float
    variant: str = "literal"

    def __post_init__(self) -> None:
        if not self.Tp > 0 or not self.d > 0:
            raise ValueError("Tp and d must be > 0")
        if self.variant not in ("literal", "toThreshold"):
            raise ValueError(f"unknown QThreshold variant {self.variant!r}")


@dataclass(frozen=True)
class ArbStep:
    """Acceptable price ap grows e-fold after each full update period ut."""

    ap: float
    e: float
    ut: float

    def __post_init__(self) -> None:
        if not self.ap > 0:
            raise ValueError("ap must be > 0")
        if not self.e > 1:
            raise ValueError("e must be > 1")
        if not self.ut >= 1:
            raise ValueError("ut must be >= 1")


@dataclass(frozen=True)
class ArbSmooth:
    """Acceptable price escalates continuously with per-round factor e^(1/ut)."""

    ap: float
    e: float
    ut: float

    def __post_init__(self) -> None:
        if not self.ap > 0:
            raise ValueError("ap must be > 0")
        if not self.e > 1:
            raise ValueError("e must be > 1")
        if not self.ut >= 1:
            raise ValueError("ut must be >= 1")


@dataclass(frozen=True)
class Learned:
    """Solver policy table bridged into the back-tester."""

    policy: PolicyTable
    grid: PriceGrid


PolicySpec = Union[Trivial, PriceMin, QThreshold, ArbStep, ArbSmooth, Learned]


@dataclass(frozen=True)
class QueueView:
    """Batch ages in rounds, oldest first (non-increasing)."""

    ages: np.ndarray

    def __post_init__(self) -> None:
        ages = np.asarray(self.ages, dtype=np.int64)
        object.__setattr__(self, "ages", ages)
        if ages.size and (np.any(ages < 0) or np.any(np.diff(ages) > 0)):
            raise ValueError("ages must be non-negative and non-increasing")

    def __len__(self) -> int:
        return int(self.ages.size)


def q_threshold_decide(
    Tp: float, d: float, variant: str, price: float, queue_len: int
) -> int:
    if price < Tp:
        return queue_len
    t = int(math.floor(math.sqrt(price - Tp) / d))
    if variant == "toThreshold":
        return max(0, queue_len - t)
    return max(0, queue_len - t - 1)


def arb_acceptable_price(
    ap: float, e: float, ut: float, age: int, mode: str
) -> float:
    """Escalated acceptable price of a batch of the given age."""
    if age < 0:
        raise ValueError("age must be >= 0")
    if mode == "step":
        return ap * e ** math.floor(age / ut)
    if mode == "smooth":
        return ap * e ** (age / ut)
    raise ValueError(f"unknown escalation mode {mode!r}")


def arb_decide(
    ap: float, e: float, ut: float, mode: str, price: float, queue: QueueView
) -> int:
    """Number of batches whose escalated acceptable price covers `price`.

    Ages are FIFO-ordered, so the postable set must be a queue prefix;
    the assertion guards that invariant against refactoring.
    """
    ages = queue.ages
    if ages.size == 0:
        return 0
    if mode == "step":
        acceptable = ap * e ** np.floor(ages / ut)
    else:
        acceptable = ap * e ** (ages / ut)
    postable = acceptable >= price
    n = int(np.count_nonzero(postable))
    assert bool(np.all(postable[:n])), "postable set is not a FIFO prefix"
    return n


def learned_decide(
    policy: PolicyTable, grid: PriceGrid, price: float, queue_len: int
) -> int:
    """Table lookup; queue overflow beyond the table cap posts the excess."""
    p_idx = price_to_index(grid, price)
    if queue_len <= policy.max_queue:
        return int(policy.actions[queue_len, p_idx])
    excess = queue_len - policy.max_queue
    return int(policy.actions[policy.max_queue, p_idx]) + excess


def decide(spec: PolicySpec, price: float, queue: QueueView) -> int:
    """Dispatch to the family rule; result is always in [0, len(queue)]."""
    n = len(queue)
    if isinstance(spec, Trivial):
        return n
    if isinstance(spec, PriceMin):
        return n if price <= spec.T else 0
    if isinstance(spec, QThreshold):
        return q_threshold_decide(spec.Tp, spec.d, spec.variant, price, n)
    if isinstance(spec, ArbStep):
        return arb_decide(spec.ap, spec.e, spec.ut, "step", price, queue)
    if isinstance(spec, ArbSmooth):
        return arb_decide(spec.ap, spec.e, spec.ut, "smooth", price, queue)
    if isinstance(spec, Learned):
        return learned_decide(spec.policy, spec.grid, price, n)
    raise TypeError(f"unknown policy spec {type(spec)}")


def percentile_price_threshold(series: PriceSeries, fraction: float = 0.8) -> float:
    """Tp auto-setting: nearest-rank percentile of the observed base fees."""
    return percentile(series, fraction)


def policy_from_json(data: dict) -> PolicySpec:
    """Parse the documented JSON form, e.g. {"kind":"arbStep","ap":96,...}."""
    kind = data.get("kind")
    if kind == "trivial":
        return Trivial()
    if kind == "priceMin":
        return PriceMin(T=float(data["T"]))
    if kind == "qThreshold":
        return QThreshold(
            Tp=float(data["Tp"]),
            d=float(data["d"]),
            variant=str(data.get("variant", "literal")),
        )
    if kind == "arbStep":
        return ArbStep(ap=float(data["ap"]), e=float(data["e"]), ut=float(data["ut"]))
    if kind == "arbSmooth":
        return ArbSmooth(ap=float(data["ap"]), e=float(data["e"]), ut=float(data["ut"]))
    if kind == "learned":
        return Learned(
            policy=PolicyTable.from_json_dict(data["policy"]),
            grid=PriceGrid.from_json_dict(data["grid"]),
        )
    raise ValueError(f"unknown policy kind {kind!r}")


def policy_to_json(spec: PolicySpec) -> dict:
    if isinstance(spec, Trivial):
        return {"kind": "trivial"}
    if isinstance(spec, PriceMin):
        return {"kind": "priceMin", "T": spec.T}
    if isinstance(spec, QThreshold):
        return {"kind": "qThreshold", "Tp": spec.Tp, "d": spec.d, "variant": spec.variant}
    if isinstance(spec, ArbStep):
        return {"kind": "arbStep", "ap": spec.ap, "e": spec.e, "ut": spec.ut}
    if isinstance(spec, ArbSmooth):
        return {"kind": "arbSmooth", "ap": spec.ap, "e": spec.e, "ut": spec.ut}
    if isinstance(spec, Learned):
        return {
            "kind": "learned",
            "policy": spec.policy.to_json_dict(),
            "grid": spec.grid.to_json_dict(),
        }
    raise TypeError(f"unknown policy spec {type(spec)}")
