"""Independent learners that reach equilibrium in symmetric stochastic games."""
from .errors import (
    AllGapsZero,
    CombinatorialBlowup,
    ConfigError,
    GameValidationError,
    IndeterminateMargin,
    NoTargetEquilibrium,
    NotSymmetric,
    ParseError,
    RangeError,
    ShapeMismatch,
    SymgaError,
)
from .game import Game, GameSpec, check_reachability, check_symmetry, load_game, save_game, validate_game
from .games import random_symmetric_game, rock_paper_scissors
from .learners import LearnerParams, LearnerState, StepSize, harmonic
from .orchestrator import (
    ExperimentConfig,
    aggregate_trials,
    recursion_oracle,
    run_experiment,
    run_oracle_process,
    run_trial,
)
from .paths import RevisionPath, construct_symmetric_path, has_revision_paths_property, is_valid_revision_path
from .policy import QuantizedPolicySet, build_quantized_set, perturb, policy_distance, project_to_grid
from .solver import (
    ExactOracle,
    GridOracle,
    compute_bar_delta,
    evaluate_policy,
    find_quantized_equilibria,
    induce_mdp,
    is_eps_best_response,
    is_eps_equilibrium,
    solve_q_star,
    verify_rho_bounds,
)

__version__ = "0.1.0"
