"""Heat kernels of conformally perturbed Laplacians on periodic lattices."""

from .grid_model import (
    ConformalFactor,
    FactorFamily,
    GridTorus,
    ball_volume,
    build_torus,
    make_factor,
    torus_distance,
)
from .operators import (
    GeneratorMatrix,
    base_laplacian,
    conformal_laplacian,
    doob_residual,
    schrodinger_operator,
    weighted_laplacian,
)
from .spectral import EigenSystem, KernelMatrix, eigendecompose, kernel_at, kernel_entries
from .dyson import DysonConfig, DysonSeries, TailReport, cauchy_derivative, dyson_sum
from .subordination import (
    Subordinator,
    fractional_kernel_spectral,
    subordinate_kernel,
    subordinator_density,
)

__version__ = "0.1.0"

__all__ = [
    "ConformalFactor",
    "FactorFamily",
    "GridTorus",
    "ball_volume",
    "build_torus",
    "make_factor",
    "torus_distance",
    "GeneratorMatrix",
    "base_laplacian",
    "conformal_laplacian",
    "doob_residual",
    "schrodinger_operator",
    "weighted_laplacian",
    "EigenSystem",
    "KernelMatrix",
    "eigendecompose",
    "kernel_at",
    "kernel_entries",
    "DysonConfig",
    "DysonSeries",
    "TailReport",
    "cauchy_derivative",
    "dyson_sum",
    "Subordinator",
    "fractional_kernel_spectral",
    "subordinate_kernel",
    "subordinator_density",
]
