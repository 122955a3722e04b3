"""Numerical laboratory for fractional KPZ-type problems with nonlocal gradients."""

from .domain_grid import Domain, Field, Grid, boundary_distance, make_grid
from .exponents import mbar, ptilde, qbar
from .fracops import (
    apply_half_laplacian,
    assemble_frac_laplacian,
    half_laplacian,
    kernel_constants,
    riesz_gradient,
    riesz_potential,
    stein_functional,
)
from .norms import gagliardo_seminorm, lebesgue_norm, sobolev_norm, stein_norm
from .poisson_solver import GreenOperator, estimate_cz_constant, green_operator, solve_poisson

__version__ = "0.1.0"

__all__ = [
    "Domain",
    "Field",
    "Grid",
    "GreenOperator",
    "apply_half_laplacian",
    "assemble_frac_laplacian",
    "boundary_distance",
    "estimate_cz_constant",
    "gagliardo_seminorm",
    "green_operator",
    "half_laplacian",
    "kernel_constants",
    "lebesgue_norm",
    "make_grid",
    "mbar",
    "ptilde",
    "qbar",
    "riesz_gradient",
    "riesz_potential",
    "sobolev_norm",
    "solve_poisson",
    "stein_functional",
    "stein_norm",
]
