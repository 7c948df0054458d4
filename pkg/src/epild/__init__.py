"""Large deviations toolkit for density-dependent epidemic jump processes."""

__version__ = "0.1.0"

from .errors import (
    DomainError,
    EpildError,
    InfeasiblePathError,
    IntegrationEscapeError,
    InvalidParameterError,
    ModelError,
    NoEndemicEquilibriumError,
    NumericalFailureError,
    PreconditionError,
    SnapError,
)
from .fluid import OdePath, integrate_ode, lln_distance
from .model import (
    JumpModel,
    SirsParams,
    birth_death_model,
    constant_rate_model,
    drift,
    endemic_equilibrium,
    grid_snap,
    linear_growth_model,
    pure_death_model,
    r0,
    sirs_model,
)
from .quasipotential import (
    ExitProblem,
    QPResult,
    branching_extinction_prob,
    eta_boundary_problem,
    extinction_problem,
    fit_exit_scaling,
    v_fixed_horizon,
    v_free_horizon,
    vbar,
    vbar_eta_extrapolation,
)
from .ratefn import (
    LocalRate,
    PLPath,
    ell,
    ell_tilde,
    local_rate,
    local_rate_dual,
    local_rate_primal,
    path_rate,
)
from .simulate import (
    SimConfig,
    Trajectory,
    estimate_direct,
    estimate_tilted,
    exit_time,
    log_radon_nikodym,
    simulate_exact,
    simulate_tilted,
)

__all__ = [
    "__version__",
    "OdePath",
    "integrate_ode",
    "lln_distance",
    "DomainError",
    "EpildError",
    "InfeasiblePathError",
    "IntegrationEscapeError",
    "InvalidParameterError",
    "ModelError",
    "NoEndemicEquilibriumError",
    "NumericalFailureError",
    "PreconditionError",
    "SnapError",
    "JumpModel",
    "SirsParams",
    "birth_death_model",
    "constant_rate_model",
    "drift",
    "endemic_equilibrium",
    "grid_snap",
    "linear_growth_model",
    "pure_death_model",
    "r0",
    "sirs_model",
    "ExitProblem",
    "QPResult",
    "branching_extinction_prob",
    "eta_boundary_problem",
    "extinction_problem",
    "fit_exit_scaling",
    "v_fixed_horizon",
    "v_free_horizon",
    "vbar",
    "vbar_eta_extrapolation",
    "LocalRate",
    "PLPath",
    "ell",
    "ell_tilde",
    "local_rate",
    "local_rate_dual",
    "local_rate_primal",
    "path_rate",
    "SimConfig",
    "Trajectory",
    "estimate_direct",
    "estimate_tilted",
    "exit_time",
    "log_radon_nikodym",
    "simulate_exact",
    "simulate_tilted",
]
