"""Importance sampling for small-noise diffusions with cross-entropy trained controls."""

from .config import ConfigError, DoubleWellDrift, ExperimentConfig, QuadraticCost, parse_config
from .control_basis import (
    ControlModel,
    RbfControlFeatures,
    RbfDictionary,
    basis_psi,
    control_value,
    double_well_dictionary,
    gradient_check,
    rbf_value,
)
from .cross_entropy import (
    AssemblyError,
    CeConfig,
    CeReport,
    SingularSystemError,
    assemble_normal_equations,
    ce_iterate,
    ce_run,
    solve_ridge,
)
from .estimator import CrossEntropyControl
from .estimators import (
    EfficiencyReport,
    EstimateReport,
    efficiency_sweep,
    estimate_from_log_terms,
    is_estimate,
    mc_estimate,
)
from .measure import (
    DegenerateWeightsError,
    WeightOverflowError,
    WeightSet,
    compute_weights,
    log_proposal_likelihood,
    log_target_weight,
    quadratic_log_likelihood,
    self_normalize,
)
from .pde_reference import (
    ExtrapolationError,
    PdeGrid,
    PdeSolution,
    PositivityError,
    control_distance,
    reference_control,
    solve_feynman_kac,
)
from .sde_core import (
    IntegrationDivergedError,
    SdeProblem,
    TimeGrid,
    Trajectory,
    TrajectoryBatch,
    euler_step,
    simulate_batch,
)

__version__ = "0.1.0"
