"""olivetable: simulation and exact-analytics lab for the random
plates-and-olives process."""

__version__ = "0.1.0"

from .process import (
    InvalidMoveError,
    Move,
    MoveCounts,
    MoveKind,
    Plate,
    TableState,
    TrajectoryRecord,
    apply_move,
    move_counts,
    new_table,
    run_trajectory,
    sample_move,
    step,
)
from .chain import (
    ReturnTimePMF,
    StationaryDist,
    WalkRunStats,
    catalan,
    chain_step,
    first_return_cdf,
    first_return_pmf_closed,
    first_return_pmf_convolution,
    first_return_pmf_dp,
    mean_return_time_series,
    mean_return_time_stationary,
    published_first_return_pmf,
    simulate_walk,
)
from .ensemble import EnsembleConfig, EnsembleStats, merge, run_ensemble
from .oracle import (
    BudgetExceededError,
    CanonicalState,
    enumerate_chain_paths,
    exact_expected_olives,
    exact_olive_distribution,
    exact_transition_check,
)
from .rng import derive_seed, make_rng

__all__ = [
    "__version__",
    "InvalidMoveError",
    "Move",
    "MoveCounts",
    "MoveKind",
    "Plate",
    "TableState",
    "TrajectoryRecord",
    "apply_move",
    "move_counts",
    "new_table",
    "run_trajectory",
    "sample_move",
    "step",
    "ReturnTimePMF",
    "StationaryDist",
    "WalkRunStats",
    "catalan",
    "chain_step",
    "first_return_cdf",
    "first_return_pmf_closed",
    "first_return_pmf_convolution",
    "first_return_pmf_dp",
    "mean_return_time_series",
    "mean_return_time_stationary",
    "published_first_return_pmf",
    "simulate_walk",
    "EnsembleConfig",
    "EnsembleStats",
    "merge",
    "run_ensemble",
    "BudgetExceededError",
    "CanonicalState",
    "enumerate_chain_paths",
    "exact_expected_olives",
    "exact_olive_distribution",
    "exact_transition_check",
    "derive_seed",
    "make_rng",
]
