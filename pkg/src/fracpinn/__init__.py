"""Physics-informed neural network solver for fractional delay equations and
fractional differential-algebraic systems.

The Caputo derivative is discretized once per grid by the L1 scheme into a
lower-triangular operational matrix; training then only needs network values
at the nodes and a matrix-vector product.
"""

__version__ = "0.1.0"

from fracpinn.caputo import (
    CaputoMatrix,
    FractionalOrder,
    Grid,
    apply,
    assemble_matrix,
    caputo_monomial,
    graded_grid,
    uniform_grid,
)
from fracpinn.metrics import ErrorReport, compute_errors
from fracpinn.optimize import DivergenceError, Schedule, train
from fracpinn.polynet import Network, build_network
from fracpinn.problems import builtin_problem, export_problem_template, load_problem, parse_problem
from fracpinn.residual import DaeSystem, FddeProblem, LossConfig, ResidualModel
from fracpinn.solver import RunConfig, Solution, solve_problem

__all__ = [
    "CaputoMatrix",
    "DaeSystem",
    "DivergenceError",
    "ErrorReport",
    "FddeProblem",
    "FractionalOrder",
    "Grid",
    "LossConfig",
    "Network",
    "ResidualModel",
    "RunConfig",
    "Schedule",
    "Solution",
    "apply",
    "assemble_matrix",
    "build_network",
    "builtin_problem",
    "caputo_monomial",
    "compute_errors",
    "export_problem_template",
    "graded_grid",
    "load_problem",
    "parse_problem",
    "solve_problem",
    "train",
    "uniform_grid",
]
