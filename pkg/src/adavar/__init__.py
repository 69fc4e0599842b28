"""Adaptive-diffusion samplers on the torus with divergence, rate and exit-time diagnostics."""

from .domain import (
    PotentialSpec,
    TorusDomain,
    cosine_well_1d,
    custom_polynomial,
    double_well_1d,
    eval_grad,
    eval_potential,
    load_grid_file,
    scan_extrema_curvature,
    sine_modes_2d,
    tabulated_grid,
)
from .dynamics import DynamicsSpec, EnsembleState, InitSpec, WeightGenerator, build_dynamics, em_step, simulate
from .errors import (
    AdavarError,
    ConfigError,
    DomainError,
    EstimationError,
    FitError,
    MeshMismatchError,
    NumericalError,
    StructureError,
    ValidityError,
)
from .exit_time import ExitProblem, mfpt_asymptotic, mfpt_derivfree, mfpt_langevin, mfpt_monte_carlo
from .fpe import FpeState, fpe_solve, fpe_step
from .gibbs import (
    GibbsTable,
    GridDensity,
    GridMesh,
    chi2_divergence,
    histogram_density,
    kl_divergence,
    tabulate_gibbs,
    tv_distance,
)
from .rates import RateReport, fit_decay_rate, general_rate_bound, langevin_rate_bound

__version__ = "0.1.0"
