"""Hot numeric kernels: value-table sweep and fixed-price DP fill.

Each kernel has a numba @njit implementation and a pure-numpy fallback.
The numba path is used when numba imports cleanly and the environment
variable BATCHPOST_NUMBA is not set to 0/false/off/no; the fallback is
always available and agrees with the JIT path to ~1e-12 relative (the
DP fill agrees bitwise). `benchmarks/bench_kernels.py` times both.

Value tables are flat float64 arrays in ragged layout: actions a <= q are
stored contiguously per (q, p), with level offsets offs[q] = P*q*(q+1)/2.
"""

from __future__ import annotations

import os

import numpy as np

_env = os.environ.get("BATCHPOST_NUMBA", "").strip().lower()
_WANT_NUMBA = _env not in ("0", "false", "off", "no")

try:
    if _WANT_NUMBA:
        from numba import njit, prange

        HAVE_NUMBA = True
    else:
        HAVE_NUMBA = False
except ImportError:  # pragma: no cover - depends on environment
    HAVE_NUMBA = False


def active_backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"


def set_num_threads(n: int) -> int:
    """Clamp and apply the numba thread count; no-op on the numpy path."""
    if not HAVE_NUMBA:
        return 1
    import numba

    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


def level_offsets(max_queue: int, num_prices: int) -> np.ndarray:
    """offs[q] = flat start of queue level q; offs[max_queue+1] = total size."""
    q = np.arange(max_queue + 2, dtype=np.int64)
    return num_prices * (q * (q + 1)) // 2


# ---------------------------------------------------------------------------
# value sweep


def _sweep_numpy(
    data: np.ndarray,
    best: np.ndarray,
    prices: np.ndarray,
    dense_kernel: np.ndarray,
    kern_indptr: np.ndarray,
    kern_indices: np.ndarray,
    kern_probs: np.ndarray,
    max_queue: int,
    c: float,
    alpha: float,
    delta: float,
    sentinel: float,
    out: np.ndarray,
) -> None:
    num_prices = prices.size
    offs = level_offsets(max_queue, num_prices)
    # continuation value per next-queue level: cont_all[qn-1, p] = E[best(qn, .) | p]
    cont_all = best[1:, :] @ dense_kernel.T
    for q in range(max_queue + 1):
        width = q + 1
        base = offs[q]
        for a in range(width):
            qn = q - a + 1
            if qn > max_queue:
                cont = np.full(num_prices, sentinel)
            else:
                cont = cont_all[qn - 1]
            rem = q - a
            immediate = a * prices + c * float(rem * rem)
            sl = slice(base + a, base + a + num_prices * width, width)
            out[sl] = (1.0 - alpha) * data[sl] + alpha * (immediate + delta * cont)


if HAVE_NUMBA:

    @njit(parallel=True, cache=True)
    def _sweep_numba(
        data,
        best,
        prices,
        kern_indptr,
        kern_indices,
        kern_probs,
        offs,
        max_queue,
        c,
        alpha,
        delta,
        sentinel,
        out,
    ):  # pragma: no cover - exercised via dispatcher
        num_prices = prices.shape[0]
        # phase 1: continuation per (next queue, price); reused by every
        # (q, a) pair landing on that next queue
        cont_all = np.empty((max_queue, num_prices))
        for qn in prange(1, max_queue + 1):
            for p in range(num_prices):
                acc = 0.0
                for k in range(kern_indptr[p], kern_indptr[p + 1]):
                    acc += kern_probs[k] * best[qn, kern_indices[k]]
                cont_all[qn - 1, p] = acc
        # phase 2: damped update of every stored entry
        for q in prange(max_queue + 1):
            width = q + 1
            base = offs[q]
            for p in range(num_prices):
                sbase = base + p * width
                for a in range(width):
                    qn = q - a + 1
                    if qn > max_queue:
                        cont = sentinel
                    else:
                        cont = cont_all[qn - 1, p]
                    rem = q - a
                    immediate = a * prices[p] + c * float(rem * rem)
                    out[sbase + a] = (1.0 - alpha) * data[sbase + a] + alpha * (
                        immediate + delta * cont
                    )


def sweep_once(
    data: np.ndarray,
    best: np.ndarray,
    prices: np.ndarray,
    dense_kernel: np.ndarray,
    kern_indptr: np.ndarray,
    kern_indices: np.ndarray,
    kern_probs: np.ndarray,
    max_queue: int,
    c: float,
    alpha: float,
    delta: float,
    sentinel: float,
) -> np.ndarray:
    """One synchronous damped update of the flat value table."""
    out = np.empty_like(data)
    if HAVE_NUMBA:
        offs = level_offsets(max_queue, prices.size)
        _sweep_numba(
            data,
            best,
            prices,
            kern_indptr,
            kern_indices,
            kern_probs,
            offs,
            max_queue,
            c,
            alpha,
            delta,
            sentinel,
            out,
        )
    else:
        _sweep_numpy(
            data,
            best,
            prices,
            dense_kernel,
            kern_indptr,
            kern_indices,
            kern_probs,
            max_queue,
            c,
            alpha,
            delta,
            sentinel,
            out,
        )
    return out


# ---------------------------------------------------------------------------
# fixed-price DP fill


def _dp_fill_numpy(prices: np.ndarray, c: float) -> tuple:
    n = prices.size
    dp = np.full((n + 1, n + 1), np.inf)
    choice = np.zeros((n + 1, n + 1), dtype=np.int64)
    dp[0, 0] = 0.0
    for i in range(n):
        p = prices[i]
        created = i + 1
        for s in range(created + 1):
            rem = created - s
            delay = c * float(rem * rem)
            t_lo = s - i if s - i > 0 else 0
            best = np.inf
            bt = 0
            for take in range(t_lo, s + 1):
                prev = dp[i, s - take]
                if prev == np.inf:
                    continue
                cand = prev + (take * p + delay)
                if cand <= best:
                    best = cand
                    bt = take
            dp[i + 1, s] = best
            choice[i + 1, s] = bt
    return dp, choice


if HAVE_NUMBA:

    @njit(cache=True)
    def _dp_fill_numba(prices, c):  # pragma: no cover - exercised via dispatcher
        n = prices.shape[0]
        dp = np.full((n + 1, n + 1), np.inf)
        choice = np.zeros((n + 1, n + 1), dtype=np.int64)
        dp[0, 0] = 0.0
        for i in range(n):
            p = prices[i]
            created = i + 1
            for s in range(created + 1):
                rem = created - s
                delay = c * float(rem * rem)
                t_lo = s - i if s - i > 0 else 0
                best = np.inf
                bt = 0
                for take in range(t_lo, s + 1):
                    prev = dp[i, s - take]
                    if prev == np.inf:
                        continue
                    cand = prev + (take * p + delay)
                    if cand <= best:
                        best = cand
                        bt = take
                dp[i + 1, s] = best
                choice[i + 1, s] = bt
        return dp, choice


def dp_fill(prices: np.ndarray, c: float) -> tuple:
    """Fill the (rounds+1) x (posted+1) min-cost table and take choices."""
    prices = np.ascontiguousarray(prices, dtype=np.float64)
    if HAVE_NUMBA:
        return _dp_fill_numba(prices, c)
    return _dp_fill_numpy(prices, c)
