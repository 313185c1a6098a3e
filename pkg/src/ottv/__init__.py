"""Cartoon-texture image restoration with a transport-cost texture fidelity.

The model splits an image ``f`` into a cartoon part ``u`` (edges and flat
regions, total-variation regularized), a texture part ``v`` (oscillations,
measured by a transport seminorm), and a residual ``w = f - K*u - v`` held
by a quadratic fidelity.  See :func:`ottv.restore.restore` for the driver
and the module docstrings for the two inner solvers.
"""

from .grid import (
    Kernel,
    ScalarField,
    VectorField,
    convolve,
    convolve_adjoint,
    div_dirichlet,
    div_periodic,
    gaussian_kernel,
    grad_adjoint_dirichlet,
    grad_periodic,
    identity_kernel,
    inner,
    norm_12,
    norm_l2,
)
from .prox import MtvParams, mtv_potential, mtv_prox, shrink_vec
from .restore import (
    CalibrationError,
    CalibrationResult,
    Decomposition,
    ModelSpec,
    OptimalityReport,
    SolveOptions,
    add_gaussian_noise,
    calibrate_residual_norm,
    optimality_report,
    psnr,
    restore,
    total_energy,
)
from .trace import ConvergenceTrace
from .tv import AlmConfig, AlmState, alm_solve, solve_u_linear, tv_energy
from .w1 import (
    DivergenceError,
    PdhgConfig,
    W1State,
    dual_lipschitz_norm,
    solve_v_subproblem,
    w1_distance,
)

__version__ = "0.1.0"

__all__ = [
    "AlmConfig",
    "AlmState",
    "CalibrationError",
    "CalibrationResult",
    "ConvergenceTrace",
    "Decomposition",
    "DivergenceError",
    "Kernel",
    "ModelSpec",
    "MtvParams",
    "OptimalityReport",
    "PdhgConfig",
    "ScalarField",
    "SolveOptions",
    "VectorField",
    "W1State",
    "add_gaussian_noise",
    "alm_solve",
    "calibrate_residual_norm",
    "convolve",
    "convolve_adjoint",
    "div_dirichlet",
    "div_periodic",
    "dual_lipschitz_norm",
    "gaussian_kernel",
    "grad_adjoint_dirichlet",
    "grad_periodic",
    "identity_kernel",
    "inner",
    "mtv_potential",
    "mtv_prox",
    "norm_12",
    "norm_l2",
    "optimality_report",
    "psnr",
    "restore",
    "shrink_vec",
    "solve_u_linear",
    "solve_v_subproblem",
    "total_energy",
    "tv_energy",
    "w1_distance",
]
