"""Radial numerics for the Choquard equation at the lower critical exponent p = alpha/N + 1."""

__version__ = "0.1.0"

from .functionals import (
    HlsProfile,
    IdentityReport,
    c_infty_reference,
    critical_quotient,
    energy_Q,
    grad_D,
    grad_Q,
    hardy_weighted_sup,
    i_v_functional,
    identity_report,
)
from .grid import Field, ProblemParams, RadialGrid, build_grid, integrate
from .potentials import Constant, Model, Null, Tabulated, eval_potential, radial_tilt, tail_coefficient, thresholds
from .riesz import RieszOperator, build_riesz_operator, constraint_D, riesz_apply
from .solver import SolveOptions, SolveResult, Status, normalize, solve, spreading_diagnostic, verify_null_solution

__all__ = [
    "Constant", "Field", "HlsProfile", "IdentityReport", "Model", "Null", "ProblemParams", "RadialGrid",
    "RieszOperator", "SolveOptions", "SolveResult", "Status", "Tabulated", "build_grid", "build_riesz_operator",
    "c_infty_reference", "constraint_D", "critical_quotient", "energy_Q", "eval_potential", "grad_D", "grad_Q",
    "hardy_weighted_sup", "i_v_functional", "identity_report", "integrate", "normalize", "radial_tilt",
    "riesz_apply", "solve", "spreading_diagnostic", "tail_coefficient", "thresholds", "verify_null_solution",
]
