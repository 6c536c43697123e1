"""Multiplicative price-change distributions, grid discretization, sampling.

The base fee moves by at most 1/8 per block, so the one-block factor is
modeled as uniform on [7/8, 9/8]. One round is a minute (five blocks), so
the per-round factor is the product of five independent one-block factors.
Products are convolved as sums of log-factors on a fine equally spaced
log lattice, then re-binned to the requested number of atoms; atom
positions are probability-weighted centroids so the mean factor is
preserved exactly.

A TransitionKernel discretizes the factor law onto a bounded price grid:
mass that lands off-grid is clamped to the nearest boundary index and each
row is renormalized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

BLOCK_FACTOR_LO = 0.875  # 7/8, max per-block decrease
BLOCK_FACTOR_HI = 1.125  # 9/8, max per-block increase
BLOCKS_PER_ROUND = 5

_PROB_SUM_TOL = 1e-9
_FINE_LOG_BINS = 4096


@dataclass(frozen=True)
class FactorDistribution:
    """Discrete law of a multiplicative one-round price factor."""

    factors: np.ndarray
    probs: np.ndarray

    def __post_init__(self) -> None:
        factors = np.asarray(self.factors, dtype=np.float64)
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "probs", probs)
        if factors.ndim != 1 or probs.shape != factors.shape:
            raise ValueError("factors and probs must be 1-d and same length")
        if factors.size == 0:
            raise ValueError("empty distribution")
        if not np.all(factors > 0):
            raise ValueError("factors must be > 0")
        if not np.all(np.diff(factors) > 0):
            raise ValueError("factors must be strictly ascending")
        if np.any(probs < 0):
            raise ValueError("probabilities must be >= 0")
        if abs(float(probs.sum()) - 1.0) > _PROB_SUM_TOL:
            raise ValueError(f"probabilities sum to {probs.sum()}, not 1")

    def mean(self) -> float:
        return float(np.dot(self.probs, self.factors))

    def median(self) -> float:
        cdf = np.cumsum(self.probs)
        return float(self.factors[int(np.searchsorted(cdf, 0.5))])

    def log_mean(self) -> float:
        return float(np.dot(self.probs, np.log(self.factors)))

    def log_var(self) -> float:
        logs = np.log(self.factors)
        mu = self.log_mean()
        return float(np.dot(self.probs, (logs - mu) ** 2))

    def to_json_dict(self) -> dict:
        return {"factors": self.factors.tolist(), "probs": self.probs.tolist()}

    @classmethod
    def from_json_dict(cls, data: dict) -> "FactorDistribution":
        probs = np.asarray(data["probs"], dtype=np.float64)
        total = float(probs.sum())
        if total <= 0:
            raise ValueError("probabilities must have positive total")
        # serialized probs were rounded for byte stability; renormalize
        return cls(
            factors=np.asarray(data["factors"], dtype=np.float64),
            probs=probs / total,
        )


@dataclass(frozen=True)
class PriceGrid:
    """Bounded discretized price space with nearest-index mapping."""

    num_points: int
    p_min: float
    p_max: float
    spacing: str = "linear"

    def __post_init__(self) -> None:
        if self.num_points < 2:
            raise ValueError("num_points must be >= 2")
        if not 0 < self.p_min < self.p_max:
            raise ValueError("require 0 < p_min < p_max")
        if self.spacing not in ("linear", "log"):
            raise ValueError(f"unknown grid spacing {self.spacing!r}")

    def prices(self) -> np.ndarray:
        if self.spacing == "linear":
            return np.linspace(self.p_min, self.p_max, self.num_points)
        return np.geomspace(self.p_min, self.p_max, self.num_points)

    def to_json_dict(self) -> dict:
        return {
            "numPoints": self.num_points,
            "pMin": self.p_min,
            "pMax": self.p_max,
            "spacing": self.spacing,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "PriceGrid":
        return cls(
            num_points=int(data["numPoints"]),
            p_min=float(data["pMin"]),
            p_max=float(data["pMax"]),
            spacing=str(data.get("spacing", "linear")),
        )

    @classmethod
    def full_range_preset(cls) -> "PriceGrid":
        """400-point linear grid spanning a 6000:1 range (spacing 15)."""
        return cls(num_points=400, p_min=15.0, p_max=6000.0)


def price_to_index(grid: PriceGrid, p: float) -> int:
    """Nearest grid index for a price, clamped to the grid."""
    if grid.spacing == "linear":
        step = (grid.p_max - grid.p_min) / (grid.num_points - 1)
        i = int(round((p - grid.p_min) / step))
    else:
        step = (math.log(grid.p_max) - math.log(grid.p_min)) / (grid.num_points - 1)
        i = int(round((math.log(max(p, 1e-300)) - math.log(grid.p_min)) / step))
    return min(max(i, 0), grid.num_points - 1)


def index_to_price(grid: PriceGrid, i: int) -> float:
    if not 0 <= i < grid.num_points:
        raise IndexError(f"grid index {i} out of range")
    if grid.spacing == "linear":
        step = (grid.p_max - grid.p_min) / (grid.num_points - 1)
        return grid.p_min + i * step
    step = (math.log(grid.p_max) - math.log(grid.p_min)) / (grid.num_points - 1)
    return math.exp(math.log(grid.p_min) + i * step)


@dataclass(frozen=True)
class TransitionKernel:
    """Sparse row-stochastic next-price law over grid indices (CSR layout)."""

    indptr: np.ndarray
    indices: np.ndarray
    probs: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "indptr", np.asarray(self.indptr, dtype=np.int64))
        object.__setattr__(self, "indices", np.asarray(self.indices, dtype=np.int64))
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=np.float64))
        for r in range(self.num_rows):
            row = self.probs[self.indptr[r] : self.indptr[r + 1]]
            if row.size == 0:
                raise ValueError(f"kernel row {r} is empty")
            if np.any(row < 0):
                raise ValueError(f"kernel row {r} has negative mass")
            if abs(float(row.sum()) - 1.0) > _PROB_SUM_TOL:
                raise ValueError(f"kernel row {r} sums to {row.sum()}, not 1")

    @property
    def num_rows(self) -> int:
        return len(self.indptr) - 1

    def row(self, i: int) -> tuple:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.probs[lo:hi]

    def to_dense(self) -> np.ndarray:
        n = self.num_rows
        dense = np.zeros((n, n))
        for r in range(n):
            cols, mass = self.row(r)
            dense[r, cols] = mass
        return dense

    def to_json_dict(self) -> dict:
        rows = []
        for r in range(self.num_rows):
            cols, mass = self.row(r)
            rows.append([[int(c), float(m)] for c, m in zip(cols, mass)])
        return {"rows": rows}

    @classmethod
    def from_json_dict(cls, data: dict) -> "TransitionKernel":
        indptr = [0]
        indices: list = []
        probs: list = []
        for row in data["rows"]:
            total = sum(m for _, m in row)
            if total <= 0:
                raise ValueError("kernel row with non-positive total mass")
            for c, m in row:
                indices.append(int(c))
                probs.append(float(m) / total)  # undo serialization rounding
            indptr.append(len(indices))
        return cls(
            indptr=np.asarray(indptr), indices=np.asarray(indices), probs=np.asarray(probs)
        )


@dataclass(frozen=True)
class PriceSeries:
    """Price path in GWEI with optional strictly increasing timestamps."""

    prices: np.ndarray
    timestamps: Optional[np.ndarray] = field(default=None)

    def __post_init__(self) -> None:
        prices = np.asarray(self.prices, dtype=np.float64)
        object.__setattr__(self, "prices", prices)
        if prices.ndim != 1 or prices.size == 0:
            raise ValueError("prices must be a non-empty 1-d vector")
        if not np.all(prices > 0):
            raise ValueError("prices must all be > 0")
        if self.timestamps is not None:
            ts = np.asarray(self.timestamps, dtype=np.float64)
            object.__setattr__(self, "timestamps", ts)
            if ts.shape != prices.shape:
                raise ValueError("timestamps and prices must have the same length")
            if not np.all(np.diff(ts) > 0):
                raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return int(self.prices.size)


def block_factor_distribution(n_bins: int) -> FactorDistribution:
    """Uniform one-block factor on [7/8, 9/8] as n_bins equal-mass atoms.

    Atoms sit at arithmetic bin midpoints, so the mean factor is exactly 1.
    """
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    edges = np.linspace(BLOCK_FACTOR_LO, BLOCK_FACTOR_HI, n_bins + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    return FactorDistribution(factors=mids, probs=np.full(n_bins, 1.0 / n_bins))


def minute_factor_distribution(
    n_steps: int = BLOCKS_PER_ROUND, n_bins: int = 256, fine_bins: int = _FINE_LOG_BINS
) -> FactorDistribution:
    """Law of the product of n_steps independent one-block factors.

    The one-block uniform law is discretized onto fine_bins equal-width
    log-factor bins; the product becomes an exact lattice convolution of
    the log masses, which is then re-binned to n_bins output atoms placed
    at probability-weighted centroids (mean-preserving).
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if n_bins < 2 or fine_bins < 2:
        raise ValueError("bin counts must be >= 2")
    log_lo, log_hi = math.log(BLOCK_FACTOR_LO), math.log(BLOCK_FACTOR_HI)
    h = (log_hi - log_lo) / fine_bins
    edges = np.linspace(log_lo, log_hi, fine_bins + 1)
    # uniform-in-factor mass of each log bin
    mass = (np.exp(edges[1:]) - np.exp(edges[:-1])) / (BLOCK_FACTOR_HI - BLOCK_FACTOR_LO)
    conv = mass.copy()
    for _ in range(n_steps - 1):
        conv = np.convolve(conv, mass)
    # lattice of summed log-midpoints
    k = np.arange(conv.size)
    logs = n_steps * log_lo + (k + 0.5 * n_steps) * h
    factors_fine = np.exp(logs)

    out_lo, out_hi = n_steps * log_lo, n_steps * log_hi
    width = (out_hi - out_lo) / n_bins
    bins = np.clip(((logs - out_lo) / width).astype(np.int64), 0, n_bins - 1)
    prob_out = np.bincount(bins, weights=conv, minlength=n_bins)
    mass_x_factor = np.bincount(bins, weights=conv * factors_fine, minlength=n_bins)
    keep = prob_out > 0
    factors_out = mass_x_factor[keep] / prob_out[keep]
    probs_out = prob_out[keep]
    return FactorDistribution(factors=factors_out, probs=probs_out / probs_out.sum())


def empirical_factor_distribution(series: PriceSeries, n_bins: int) -> FactorDistribution:
    """Histogram of consecutive price ratios, atoms at per-bin ratio centroids."""
    if len(series) < 2:
        raise ValueError("series must have at least 2 points")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    ratios = series.prices[1:] / series.prices[:-1]
    lo, hi = float(ratios.min()), float(ratios.max())
    if lo == hi:
        return FactorDistribution(factors=np.array([lo]), probs=np.array([1.0]))
    width = (hi - lo) / n_bins
    bins = np.clip(((ratios - lo) / width).astype(np.int64), 0, n_bins - 1)
    counts = np.bincount(bins, minlength=n_bins).astype(np.float64)
    sums = np.bincount(bins, weights=ratios, minlength=n_bins)
    keep = counts > 0
    factors = sums[keep] / counts[keep]
    probs = counts[keep] / counts.sum()
    return FactorDistribution(factors=factors, probs=probs)


def build_kernel(grid: PriceGrid, dist: FactorDistribution) -> TransitionKernel:
    """Discretize the factor law onto the grid as a row-stochastic kernel.

    For each grid price p, the mass of every atom f lands at the nearest
    grid index of p*f; off-grid targets clamp to the boundary index. Rows
    are renormalized to sum exactly to 1.
    """
    prices = grid.prices()
    n = grid.num_points
    if grid.spacing == "linear":
        step = (grid.p_max - grid.p_min) / (n - 1)
        targets = np.rint((np.outer(prices, dist.factors) - grid.p_min) / step)
    else:
        step = (math.log(grid.p_max) - math.log(grid.p_min)) / (n - 1)
        targets = np.rint(
            (np.log(np.outer(prices, dist.factors)) - math.log(grid.p_min)) / step
        )
    cols = np.clip(targets, 0, n - 1).astype(np.int64)

    indptr = [0]
    all_indices: list = []
    all_probs: list = []
    for r in range(n):
        row = np.zeros(n)
        np.add.at(row, cols[r], dist.probs)
        nz = np.nonzero(row)[0]
        mass = row[nz]
        mass = mass / mass.sum()
        all_indices.extend(nz.tolist())
        all_probs.extend(mass.tolist())
        indptr.append(len(all_indices))
    return TransitionKernel(
        indptr=np.asarray(indptr),
        indices=np.asarray(all_indices),
        probs=np.asarray(all_probs),
    )


def sample_path(
    dist: FactorDistribution,
    p0: float,
    length: int,
    seed: int,
    floor: float = 0.0,
) -> PriceSeries:
    """Multiplicative random walk of `length` prices starting at p0.

    p[i+1] = max(floor, p[i] * f_i) with f_i i.i.d. from dist;
    deterministic for a given seed.
    """
    if not p0 > 0:
        raise ValueError("p0 must be > 0")
    if length < 1:
        raise ValueError("length must be >= 1")
    rng = np.random.default_rng(seed)
    probs = dist.probs / dist.probs.sum()
    idx = rng.choice(dist.factors.size, size=length - 1, p=probs)
    steps = dist.factors[idx]
    prices = np.empty(length)
    prices[0] = p0
    if floor <= 0:
        prices[1:] = p0 * np.cumprod(steps)
    else:
        p = p0
        for i, f in enumerate(steps):
            p = max(floor, p * f)
            prices[i + 1] = p
    return PriceSeries(prices=prices)


def sample_kernel_path(
    kernel: TransitionKernel, grid: PriceGrid, start_index: int, length: int, seed: int
) -> PriceSeries:
    """Walk grid indices according to kernel rows; returns grid prices."""
    if not 0 <= start_index < grid.num_points:
        raise ValueError("start_index outside the grid")
    if length < 1:
        raise ValueError("length must be >= 1")
    if kernel.num_rows != grid.num_points:
        raise ValueError("kernel and grid size mismatch")
    rng = np.random.default_rng(seed)
    cum_rows = []
    for r in range(kernel.num_rows):
        cols, mass = kernel.row(r)
        cum_rows.append((cols, np.cumsum(mass)))
    prices = grid.prices()
    out = np.empty(length)
    i = start_index
    out[0] = prices[i]
    u = rng.random(length - 1)
    for t in range(1, length):
        cols, cum = cum_rows[i]
        i = int(cols[min(np.searchsorted(cum, u[t - 1], side="right"), cols.size - 1)])
        out[t] = prices[i]
    return PriceSeries(prices=out)
