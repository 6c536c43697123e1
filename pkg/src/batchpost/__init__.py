"""Batch-posting strategy toolkit for rollup calldata.

Computes, analyzes, and back-tests posting policies for a queue of
fixed-size batches under a fluctuating base fee: an MDP cost model with
quadratic delay penalty, a damped tabular value-iteration solver with
threshold analysis, heuristic policy families, a price-series
back-tester with parameter sweeps and Pareto extraction, and an exact
finite-horizon schedule optimizer for known prices.
"""

__version__ = "0.1.0"

from .core import (
    BatchRecord,
    CostParams,
    InvalidActionError,
    RoundCost,
    SimState,
    myopic_argmin,
    round_cost,
    step_queue,
    validate_decision,
)
from .price_model import (
    FactorDistribution,
    PriceGrid,
    PriceSeries,
    TransitionKernel,
    block_factor_distribution,
    build_kernel,
    empirical_factor_distribution,
    index_to_price,
    minute_factor_distribution,
    price_to_index,
    sample_kernel_path,
    sample_path,
)
from .qsolver import (
    NonConvergenceError,
    PolicyTable,
    SolverConfig,
    ThresholdSummary,
    ValueTable,
    analyze_thresholds,
    extract_policy,
    init_tables,
    monotonicity_check,
    solve,
)
from .policies import (
    ArbSmooth,
    ArbStep,
    Learned,
    PolicySpec,
    PriceMin,
    QThreshold,
    QueueView,
    Trivial,
    arb_acceptable_price,
    arb_decide,
    decide,
    learned_decide,
    policy_from_json,
    policy_to_json,
    q_threshold_decide,
)
from .backtest import BacktestConfig, BacktestReport, run, run_with_trace
from .dp_offline import (
    DPInstance,
    Schedule,
    brute_force_schedule,
    simulate_schedule,
    solve_fixed_prices,
    zero_or_all_fraction,
)
from .sweep import ParamGrid, ParetoFrontier, SweepRow, grid_sweep, improvement_vs_trivial, pareto
from .ingest import CsvSchema, Histogram, IngestError, load_csv, percentile, ratio_histogram, resample_per_minute, write_csv
