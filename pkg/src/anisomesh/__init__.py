"""Anisotropic triangulations and continuous piecewise linear splines that are
asymptotically optimal for approximation in asymmetric L_p norms."""
from .approx import (ApproxResult, LinearPoly, QuadForm, best_linear, constant_C, one_sided_best,
                     optimal_triangle)
from .functions import Field, get_function, predicted_limit, sqrtH_seminorm
from .geometry import Mesh, Square, Triangle, unit_equilateral
from .integrate import Weights, asym_deviation
from .mesher import BuildParams, Triangulation, build
from .spline import Spline, assemble, convergence_run, free_spline_error, global_error

__version__ = "0.1.0"

__all__ = [
    "ApproxResult", "BuildParams", "Field", "LinearPoly", "Mesh", "QuadForm", "Spline", "Square",
    "Triangle", "Triangulation", "Weights", "asym_deviation", "assemble", "best_linear", "build",
    "constant_C", "convergence_run", "free_spline_error", "get_function", "global_error",
    "one_sided_best", "optimal_triangle", "predicted_limit", "sqrtH_seminorm", "unit_equilateral",
]
