from .exceptions import (
    IMACError,
    InputError,
    ScenarioError,
    DomainError,
    SolverError,
    CertificationError,
)
from .channel import (
    Scenario,
    RealLiftedChannel,
    LiftedNetwork,
    lift_complex_to_real,
    extend,
    load_scenario,
    parse_scenario,
    dump_scenario,
    builtin_scenarios,
)
from .rates import (
    SignalingMode,
    CovarianceSet,
    signal_covariance,
    interference_covariance,
    achievable_rate,
    achievable_rates,
    properness_defect,
    project_proper,
    covariance_basis,
)
from .bound import fenchel_upper, rate_lower_bound, gamma_from_covariances
from .subproblem import (
    BarrierOptions,
    SubproblemSpec,
    SubproblemResult,
    SubproblemStatus,
    solve_subproblem,
    phase1_feasible_point,
    grad_rate_lower_bound,
)
from .sca import (
    SolverOptions,
    SignalingConfig,
    SolveStatus,
    SolveResult,
    CertificationReport,
    minimize_sum_power,
    initialize_gamma,
    refine_sum_power,
    starting_points,
    certify,
    covariance_ranks,
)
from .cache_manager import ResultCache, get_cache_manager
from .sweep import (
    DemandGrid,
    Curve,
    SweepSpec,
    SweepRow,
    SWEEP_PRESETS,
    parse_demands,
    parse_modes,
    preset_spec,
    run_sweep,
    emit_table,
    write_table,
)

__all__ = [
    "IMACError",
    "InputError",
    "ScenarioError",
    "DomainError",
    "SolverError",
    "CertificationError",
    "Scenario",
    "RealLiftedChannel",
    "LiftedNetwork",
    "lift_complex_to_real",
    "extend",
    "load_scenario",
    "parse_scenario",
    "dump_scenario",
    "builtin_scenarios",
    "SignalingMode",
    "CovarianceSet",
    "signal_covariance",
    "interference_covariance",
    "achievable_rate",
    "achievable_rates",
    "properness_defect",
    "project_proper",
    "covariance_basis",
    "fenchel_upper",
    "rate_lower_bound",
    "gamma_from_covariances",
    "BarrierOptions",
    "SubproblemSpec",
    "SubproblemResult",
    "SubproblemStatus",
    "solve_subproblem",
    "phase1_feasible_point",
    "grad_rate_lower_bound",
    "SolverOptions",
    "SignalingConfig",
    "SolveStatus",
    "SolveResult",
    "CertificationReport",
    "minimize_sum_power",
    "initialize_gamma",
    "refine_sum_power",
    "starting_points",
    "certify",
    "covariance_ranks",
    "ResultCache",
    "get_cache_manager",
    "DemandGrid",
    "Curve",
    "SweepSpec",
    "SweepRow",
    "SWEEP_PRESETS",
    "parse_demands",
    "parse_modes",
    "preset_spec",
    "run_sweep",
    "emit_table",
    "write_table",
]
