"""Backstepping boundary control of large n+1 systems of hyperbolic PDEs.

Exact gain kernels, continuum-approximation kernels, closed-loop simulation
and the diagnostics that compare them.
"""

__version__ = "0.1.0"

from .analysis import (
    LyapunovConfig,
    backstepping_beta,
    compare_controls,
    compare_solutions,
    decay_fit,
    default_lyapunov_config,
    lyapunov_series,
    lyapunov_V,
)
from .continuum import (
    ContinuumKernel,
    continuum_residual,
    example_kernel,
    kernel_delta,
    sample_gains,
    sample_kernel,
    solve_continuum_kernels,
)
from .grids import Grid1D, StateN, StepFunction, TriGrid, inner_product_E, lift, norm_E, project
from .kernels import KernelsN, KernelSolverError, kernel_residual, solve_exact_kernels
from .params import (
    ContinuumParams,
    ParameterError,
    ParamsN,
    example_params_continuum,
    example_params_n,
    interpolate_params,
    lift_params,
    param_error,
    sample_params,
)
from .simulator import (
    Controller,
    SimulationError,
    Trajectory,
    example_initial_state,
    simulate,
    transport_oracle,
)
