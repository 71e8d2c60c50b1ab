"""Simulator and verification harness for the stochastic porous medium equation
with multiplicative noise and Dirichlet boundary conditions.

The package reproduces, at desk scale, the weighted-L1 contraction of coupled
trajectories, the optimal polynomial mixing rate t^{-1/(m-1)}, the
coming-down-from-infinity bound, and stability under regularization of the
nonlinearity, the noise coefficient, and the initial condition.
"""

from ._errors import BlowUpError, ConfigError, EnsembleRejectedError
from .domain import (Grid1D, GridFunction, Weight, build_grid, bump_profile,
                     discrete_laplacian, grid_function, lp_norm, sine_profile,
                     solve_weight, weighted_l1_norm)
from .model import (NoiseModel, Nonlinearity, ValidationReport, eval_nonlinearity,
                    eval_sigma, noise_distance, regularize, truncate_noise,
                    validate_assumption_A, validate_noise)
from .solver import (CoupledRecords, EnsembleStats, NoiseIncrements, SolverConfig,
                     clamp_initial_condition, run_coupled, run_ensemble, step_fd,
                     step_galerkin, step_semilinear)
from .analysis import (DecaySeries, RateFit, Verdict, coming_down_statistic,
                       contraction_check, entropy_residual, eta_delta,
                       fit_power_exponent, g_alpha, lower_bound_check, mixing_gap,
                       ode_comparison, series_from_stats, theoretical_envelope)
from .exactsol import Profile, separable_solution, solve_profile

__version__ = "0.1.0"
