"""Zero-sum games of impulse control versus stopping, solved two ways.

Route one discretizes the game itself: backward dynamic programming over grid
dates where the stopper moves first and the impulse controller places batches
of interventions under a budget.  Route two penalizes a reflected backward
equation with jumps on the exact scenario lattice; its monotone limit in the
penalty level is the non-linear Snell envelope that the game value must match.
The randomization layer reweights the jump intensity (Girsanov) and checks the
saddle-point representation connecting the two.
"""

from .model import (
    CadlagPath,
    CapacityError,
    DivergenceError,
    ImpulseControl,
    JumpEvent,
    MarkedPointMeasure,
    PathBundle,
    ProblemSpec,
    SpecError,
    concat,
    cost_functional,
    path_distance,
)
from .paths import (
    DriverNoise,
    ScenarioLattice,
    estimate_flow_modulus,
    moment_diagnostic,
    simulate_bundle,
    simulate_measure,
    simulate_sde,
    substream,
)
from .game import (
    GameGrid,
    GameSolution,
    MarkCell,
    StoppingStrategy,
    SweepResult,
    ValueField,
    discretize_control,
    dpp_backward,
    extract_stopping_strategy,
    roll_forward_value,
    truncation_sweep,
    upper_value,
)
from .bsde import (
    BsdeSpec,
    LatticeStoppingRule,
    LsmcPenalizedSolution,
    PenalizedSolution,
    SnellLimitReport,
    optimal_stopping_time,
    simulate_jump_paths,
    snell_limit,
    solve_penalized,
    solve_penalized_lsmc,
    stopped_bsde_solve,
)
from .randomized import (
    Density,
    SaddleReport,
    atom_counts,
    girsanov_weight,
    randomized_value,
    randomized_value_mc,
    saddle_density,
    sample_girsanov_weights,
    verify_saddle,
)
from .harness import ExperimentConfig, make_problem

__version__ = "0.1.0"

__all__ = [
    "CadlagPath",
    "CapacityError",
    "DivergenceError",
    "ImpulseControl",
    "JumpEvent",
    "MarkedPointMeasure",
    "PathBundle",
    "ProblemSpec",
    "SpecError",
    "concat",
    "cost_functional",
    "path_distance",
    "DriverNoise",
    "ScenarioLattice",
    "estimate_flow_modulus",
    "moment_diagnostic",
    "simulate_bundle",
    "simulate_measure",
    "simulate_sde",
    "substream",
    "GameGrid",
    "GameSolution",
    "MarkCell",
    "StoppingStrategy",
    "SweepResult",
    "ValueField",
    "discretize_control",
    "dpp_backward",
    "extract_stopping_strategy",
    "roll_forward_value",
    "truncation_sweep",
    "upper_value",
    "BsdeSpec",
    "LatticeStoppingRule",
    "LsmcPenalizedSolution",
    "PenalizedSolution",
    "SnellLimitReport",
    "optimal_stopping_time",
    "simulate_jump_paths",
    "snell_limit",
    "solve_penalized",
    "solve_penalized_lsmc",
    "stopped_bsde_solve",
    "Density",
    "SaddleReport",
    "atom_counts",
    "girsanov_weight",
    "randomized_value",
    "randomized_value_mc",
    "saddle_density",
    "sample_girsanov_weights",
    "verify_saddle",
    "ExperimentConfig",
    "make_problem",
    "__version__",
]
