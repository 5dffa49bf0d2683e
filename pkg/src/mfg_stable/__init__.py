"""Finite element solver and stability analysis for stationary mean field games on the torus."""

from .errors import LinearSolveFailure, MaxIterationsError, MFGError, SolverError, ValidationError
from .fem import Field
from .mesh import PeriodicMesh, build_mesh
from .mfg import Coupling, Problem, State, assemble_dF, assemble_dG, residual_F, residual_norm
from .solve import SolverOptions, newton_solve, picard_solve, smallest_singular_value
from .analyze import certify_stability, perturbed_taylor_check, sensitivity_direction

__version__ = "0.1.0"

__all__ = [
    "LinearSolveFailure",
    "MaxIterationsError",
    "MFGError",
    "SolverError",
    "ValidationError",
    "Field",
    "PeriodicMesh",
    "build_mesh",
    "Coupling",
    "Problem",
    "State",
    "assemble_dF",
    "assemble_dG",
    "residual_F",
    "residual_norm",
    "SolverOptions",
    "newton_solve",
    "picard_solve",
    "smallest_singular_value",
    "certify_stability",
    "perturbed_taylor_check",
    "sensitivity_direction",
]
