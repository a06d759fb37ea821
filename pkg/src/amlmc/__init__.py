"""Antithetic multilevel Monte Carlo for spectral-Galerkin SPDE simulation.

The package simulates semilinear stochastic heat equations driven by
trace-class Wiener noise with a truncated Milstein time stepper, couples
coarse and fine paths through shared Brownian increments, and estimates
functionals of the terminal state with an antithetic multilevel Monte Carlo
scheme whose variance decays at the corrected (not Euler) rate.
"""

from .backend import BACKEND
from .mlmc import (
    EstimatorReport,
    LevelParams,
    LevelStats,
    RateParams,
    allocate_samples,
    balance_params,
    balanced_dims,
    estimate_level,
    euler_gap_sweep,
    first_coefficient,
    mlmc_estimate,
    spatial_error_sweep,
    variance_decay_sweep,
)
from .models import DenseModel, DiffusionModel, Problem, ShiftHeatModel, model_data
from .noise import (
    IncrementBlock,
    StreamKey,
    antithetic_view,
    bracket,
    derive_stream,
    sample_block,
)
from .spectral import (
    ModeBasis,
    RationalKind,
    build_basis,
    propagate,
    rational_eval,
    sobolev_norm,
    weyl_basis,
)
from .stepping import (
    CoupledParams,
    CoupledResult,
    SimulationError,
    StepConfig,
    antithetic_macro_step,
    fine_macro_step,
    milstein_step,
    simulate_coupled,
)

__all__ = [
    "BACKEND",
    "CoupledParams",
    "CoupledResult",
    "DenseModel",
    "DiffusionModel",
    "EstimatorReport",
    "IncrementBlock",
    "LevelParams",
    "LevelStats",
    "ModeBasis",
    "Problem",
    "RateParams",
    "RationalKind",
    "ShiftHeatModel",
    "SimulationError",
    "StepConfig",
    "StreamKey",
    "allocate_samples",
    "antithetic_macro_step",
    "antithetic_view",
    "balance_params",
    "balanced_dims",
    "bracket",
    "build_basis",
    "derive_stream",
    "estimate_level",
    "euler_gap_sweep",
    "fine_macro_step",
    "first_coefficient",
    "milstein_step",
    "mlmc_estimate",
    "model_data",
    "propagate",
    "rational_eval",
    "sample_block",
    "simulate_coupled",
    "sobolev_norm",
    "spatial_error_sweep",
    "variance_decay_sweep",
    "weyl_basis",
]

__version__ = "0.1.0"
