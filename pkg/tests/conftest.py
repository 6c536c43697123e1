import numpy as np
import pytest

from batchpost import (
    CostParams,
    PriceGrid,
    TransitionKernel,
    build_kernel,
    minute_factor_distribution,
)
from batchpost.qsolver import SolverConfig, solve


def switching_kernel() -> TransitionKernel:
    """Two prices, deterministic alternation."""
    return TransitionKernel(
        indptr=np.array([0, 1, 2]),
        indices=np.array([1, 0]),
        probs=np.array([1.0, 1.0]),
    )


@pytest.fixture(scope="session")
def minute_dist():
    return minute_factor_distribution(5, 128)


@pytest.fixture(scope="session")
def desk_grid():
    return PriceGrid(40, 10.0, 400.0)


@pytest.fixture(scope="session")
def desk_kernel(desk_grid, minute_dist):
    return build_kernel(desk_grid, minute_dist)


@pytest.fixture(scope="session")
def desk_config(desk_grid):
    return SolverConfig(
        grid=desk_grid,
        max_queue=30,
        cost_params=CostParams(c=1.0, delta=0.99),
        alpha=0.5,
        epsilon=1e-3,
        max_iterations=50000,
    )


@pytest.fixture(scope="session")
def desk_solution(desk_config, desk_kernel):
    values, policy, iterations = solve(desk_config, desk_kernel)
    return values, policy, iterations


@pytest.fixture(scope="session")
def micro_solution():
    grid = PriceGrid(2, 1.0, 100.0)
    config = SolverConfig(
        grid=grid,
        max_queue=2,
        cost_params=CostParams(c=1.0, delta=0.9),
        alpha=1.0,
        epsilon=1e-9,
        max_iterations=20000,
    )
    kernel = switching_kernel()
    values, policy, iterations = solve(config, kernel)
    return config, kernel, values, policy, iterations
