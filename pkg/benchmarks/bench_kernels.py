"""Benchmark the numba kernels against their pure-numpy fallbacks.

Run: python benchmarks/bench_kernels.py [--sweep-iters 50] [--dp-n 300]

Times the value-table sweep and the fixed-price DP fill on a mid-size
problem with both backends in one process, verifies they agree, and
prints per-iteration timings plus the speedup. Set BATCHPOST_NUMBA=0 to
check what the package would do without numba entirely.
"""

import argparse
import time

import numpy as np

from batchpost import CostParams, PriceGrid, build_kernel, minute_factor_distribution
from batchpost import _kernels
from batchpost.qsolver import SolverConfig, _best_values, extract_policy, init_tables


def bench_sweep(num_prices: int, max_queue: int, iters: int) -> None:
    grid = PriceGrid(num_prices, 10.0, 2000.0)
    dist = minute_factor_distribution(5, 256)
    kernel = build_kernel(grid, dist)
    config = SolverConfig(
        grid=grid,
        max_queue=max_queue,
        cost_params=CostParams(c=1.0, delta=0.99),
        alpha=0.5,
        epsilon=1e-3,
        max_iterations=10,
    )
    values, policy = init_tables(config)
    best = _best_values(values, policy)
    prices = grid.prices()
    dense = kernel.to_dense()
    sentinel = config.sentinel()

    out_np = np.empty_like(values.data)

    def run_numpy():
        _kernels._sweep_numpy(
            values.data, best, prices, dense, kernel.indptr, kernel.indices,
            kernel.probs, max_queue, 1.0, 0.5, 0.99, sentinel, out_np,
        )
        return out_np

    results = {}
    timings = {}
    t0 = time.perf_counter()
    for _ in range(iters):
        res_np = run_numpy()
    timings["numpy"] = (time.perf_counter() - t0) / iters
    results["numpy"] = res_np.copy()

    if _kernels.HAVE_NUMBA:
        offs = _kernels.level_offsets(max_queue, num_prices)
        out_nb = np.empty_like(values.data)

        def run_numba():
            _kernels._sweep_numba(
                values.data, best, prices, kernel.indptr, kernel.indices,
                kernel.probs, offs, max_queue, 1.0, 0.5, 0.99, sentinel, out_nb,
            )
            return out_nb

        run_numba()  # JIT warm-up
        t0 = time.perf_counter()
        for _ in range(iters):
            res_nb = run_numba()
        timings["numba"] = (time.perf_counter() - t0) / iters
        results["numba"] = res_nb.copy()

    _report("value sweep", f"P={num_prices} Q={max_queue}", timings, results)


def bench_dp(n: int, repeats: int) -> None:
    rng = np.random.default_rng(0)
    prices = rng.uniform(1.0, 100.0, size=n)

    timings = {}
    results = {}
    t0 = time.perf_counter()
    for _ in range(repeats):
        dp_np, _ = _kernels._dp_fill_numpy(prices, 1.0)
    timings["numpy"] = (time.perf_counter() - t0) / repeats
    results["numpy"] = dp_np

    if _kernels.HAVE_NUMBA:
        _kernels._dp_fill_numba(prices, 1.0)  # JIT warm-up
        t0 = time.perf_counter()
        for _ in range(repeats):
            dp_nb, _ = _kernels._dp_fill_numba(prices, 1.0)
        timings["numba"] = (time.perf_counter() - t0) / repeats
        results["numba"] = dp_nb

    _report("dp fill", f"n={n}", timings, results)


def _report(label: str, size: str, timings: dict, results: dict) -> None:
    print(f"\n{label} ({size})")
    for backend, secs in timings.items():
        print(f"  {backend:>6}: {secs * 1e3:9.3f} ms/iter")
    if "numba" in timings:
        a, b = results["numba"], results["numpy"]
        mask = np.isfinite(a) & np.isfinite(b)
        worst = float(np.max(np.abs(a[mask] - b[mask]) / np.maximum(np.abs(b[mask]), 1.0)))
        print(f"  speedup: {timings['numpy'] / timings['numba']:.1f}x"
              f"  (max rel diff {worst:.2e})")
    else:
        print("  numba unavailable or disabled; numpy fallback only")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--num-prices", type=int, default=100)
    parser.add_argument("--max-queue", type=int, default=80)
    parser.add_argument("--sweep-iters", type=int, default=50)
    parser.add_argument("--dp-n", type=int, default=300)
    parser.add_argument("--dp-repeats", type=int, default=3)
    args = parser.parse_args()

    print(f"active backend: {_kernels.active_backend()}")
    bench_sweep(args.num_prices, args.max_queue, args.sweep_iters)
    bench_dp(args.dp_n, args.dp_repeats)


if __name__ == "__main__":
    main()
