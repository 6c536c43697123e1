"""Base-fee CSV ingestion, per-minute resampling, and ratio histograms.

The expected file is a headered CSV with a base-fee column (wei or gwei)
and optionally a timestamp column. Resampling keeps every stride-th point
(point samples, not averages), matching base fees read once per minute
from per-block data.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .price_model import PriceSeries


class IngestError(ValueError):
    """CSV parse or schema failure, with row/column context where known."""


@dataclass(frozen=True)
class CsvSchema:
    """Column names and base-fee unit for price CSV files."""

    fee_col: str = "fee_gwei"
    ts_col: Optional[str] = "timestamp"
    unit: str = "gwei"

    def __post_init__(self) -> None:
        if self.unit not in ("wei", "gwei"):
            raise ValueError(f"unit must be wei or gwei, got {self.unit!r}")


def load_csv(path: str, schema: CsvSchema = CsvSchema()) -> PriceSeries:
    """Parse a price series in GWEI; diagnostics carry 1-based file rows."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if schema.fee_col not in header:
            raise IngestError(f"{path}: missing fee column {schema.fee_col!r}")
        fee_idx = header.index(schema.fee_col)
        ts_idx = None
        if schema.ts_col is not None and schema.ts_col in header:
            ts_idx = header.index(schema.ts_col)

        prices = []
        timestamps = [] if ts_idx is not None else None
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) <= fee_idx:
                raise IngestError(f"{path}: row {rownum}: too few columns")
            try:
                fee = float(row[fee_idx])
            except ValueError:
                raise IngestError(
                    f"{path}: row {rownum}: column {schema.fee_col!r}: "
                    f"cannot parse {row[fee_idx]!r}"
                ) from None
            if schema.unit == "wei":
                fee = fee / 1e9
            if not fee > 0:
                raise IngestError(f"{path}: row {rownum}: non-positive fee {fee}")
            prices.append(fee)
            if timestamps is not None:
                try:
                    timestamps.append(float(row[ts_idx]))
                except (ValueError, IndexError):
                    raise IngestError(
                        f"{path}: row {rownum}: column {schema.ts_col!r}: bad timestamp"
                    ) from None
    if not prices:
        raise IngestError(f"{path}: no data rows")
    try:
        return PriceSeries(
            prices=np.asarray(prices),
            timestamps=np.asarray(timestamps) if timestamps is not None else None,
        )
    except ValueError as exc:
        raise IngestError(f"{path}: {exc}") from None


def write_csv(path: str, series: PriceSeries, schema: CsvSchema = CsvSchema()) -> None:
    """Inverse of load_csv for gwei-unit files (floats written at full repr)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if series.timestamps is not None and schema.ts_col is not None:
            writer.writerow([schema.ts_col, schema.fee_col])
            for ts, fee in zip(series.timestamps, series.prices):
                writer.writerow([repr(float(ts)), repr(float(fee))])
        else:
            writer.writerow([schema.fee_col])
            for fee in series.prices:
                writer.writerow([repr(float(fee))])


def resample_per_minute(series: PriceSeries, stride: int = 5) -> PriceSeries:
    """Every stride-th observation, starting at index 0."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    ts = series.timestamps[::stride] if series.timestamps is not None else None
    return PriceSeries(prices=series.prices[::stride], timestamps=ts)


@dataclass(frozen=True)
class Histogram:
    """Counts over strictly ascending bin edges (len(edges) = bins + 1)."""

    bin_edges: np.ndarray
    counts: np.ndarray

    def __post_init__(self) -> None:
        edges = np.asarray(self.bin_edges, dtype=np.float64)
        counts = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "counts", counts)
        if edges.size != counts.size + 1:
            raise ValueError("need len(edges) == len(counts) + 1")
        if not np.all(np.diff(edges) > 0):
            raise ValueError("bin edges must be strictly ascending")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def mass_in_bin_containing(self, x: float) -> float:
        """Fraction of observations in the bin containing x (0 if off-range)."""
        if self.total == 0 or x < self.bin_edges[0] or x > self.bin_edges[-1]:
            return 0.0
        i = min(int(np.searchsorted(self.bin_edges, x, side="right")) - 1,
                self.counts.size - 1)
        return float(self.counts[i]) / self.total

    def to_json_dict(self) -> dict:
        return {
            "binEdges": self.bin_edges.tolist(),
            "counts": self.counts.tolist(),
            "total": self.total,
        }


def ratio_histogram(series: PriceSeries, bin_width: float) -> Histogram:
    """Histogram of consecutive price ratios with edges aligned to bin_width."""
    if len(series) < 2:
        raise IngestError("series must have at least 2 points")
    if not bin_width > 0:
        raise ValueError("bin_width must be > 0")
    ratios = series.prices[1:] / series.prices[:-1]
    lo = math.floor(float(ratios.min()) / bin_width) * bin_width
    n_bins = max(1, int(math.ceil((float(ratios.max()) - lo) / bin_width)))
    edges = lo + np.arange(n_bins + 1) * bin_width
    if edges[-1] < ratios.max():
        edges = np.append(edges, edges[-1] + bin_width)
    counts, _ = np.histogram(ratios, bins=edges)
    return Histogram(bin_edges=edges, counts=counts)


def percentile(series: PriceSeries, q: float) -> float:
    """Nearest-rank percentile of the price values (q in [0, 1])."""
    if not 0 <= q <= 1:
        raise ValueError("q must be in [0, 1]")
    vals = np.sort(series.prices)
    if q == 0:
        return float(vals[0])
    rank = math.ceil(q * vals.size)
    return float(vals[rank - 1])
