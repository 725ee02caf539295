"""Structured chemostat model of dormant (persister) bacteria.

A population structured by a phenotypic expression level x in (0, 1) grows
on a single resource R; cells with x >= alpha are dormant. The package
discretizes the model by finite volumes, integrates the semi-discrete
system, computes spectral bounds and equilibria, and drives reproducible
experiments from a command line.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AssemblyError,
    BracketError,
    ConfigError,
    ConvergenceError,
    GridError,
    IntegrationError,
    NumericalError,
    ParameterError,
    PersistersError,
)
from .model import (  # noqa: E402
    FIG1_PARAMS,
    CubicVelocity,
    Grid,
    MatrixKernel,
    ModelParams,
    TabulatedVelocity,
    UniformKernel,
    eval_velocity,
    kernel_l2_norm_sq,
    quasi_contraction_bound,
    validate_params,
    velocity_sup_norm,
)
from .operators import (  # noqa: E402
    Discretization,
    OperatorMatrix,
    adjoint,
    assemble_A,
    assemble_L,
    assemble_N,
    column_sum_residual,
)
from .simulator import (  # noqa: E402
    RK4Fixed,
    RK45Adaptive,
    SimState,
    SolverConfig,
    Trajectory,
    integrate,
    mass_balance_residual,
    picard_mild_oracle,
    resource_bound_check,
    rhs,
    steady_state_detect,
)
from .spectral import (  # noqa: E402
    SpectralReport,
    monotonicity_scan,
    spectral_abscissa,
    spectral_bound,
    threshold_root,
)
from .equilibrium import EquilibriumSet, Regime, classify_regime, compute_equilibria, equilibrium_residual  # noqa: E402
