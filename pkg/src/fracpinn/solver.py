"""End-to-end solve: build networks, train on the collocation loss, evaluate."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace
from typing import Any

import numpy as np

from fracpinn.caputo import CaputoMatrix, FractionalOrder, Grid, assemble_matrix, graded_grid
from fracpinn.metrics import ErrorReport, compute_errors
from fracpinn.optimize import Schedule, TrainResult, train
from fracpinn.polynet import Network, build_network
from fracpinn.problems import DDE_ARCHITECTURE, builtin_problem, load_problem
from fracpinn.residual import DaeSystem, FddeProblem, LossConfig, ResidualModel

__all__ = [
    "RunConfig",
    "Solution",
    "assemble_matrices",
    "load_config_problem",
    "make_grid",
    "make_networks",
    "solve_problem",
    "split_params",
    "with_order",
]


@dataclass
class RunConfig:
    """Settings of one training run.

    ``n`` is the number of collocation nodes (``n - 1`` sub-intervals).
    """

    example: int | None = None
    problem_file: str | None = None
    n: int = 101
    graded: float = 1.0
    alpha: float | None = None
    lam: float = 10.0
    reduction: str = "mean_square"
    adam_epochs: int = 2000
    lbfgs_iters: int = 1000
    lr: float = 0.01
    seed: int = 0
    deterministic: bool = False
    threads: int | None = None
    eval_points: int = 300
    use_history: bool = True
    per_output_affine: bool = True
    out: str | None = None

    def validate(self) -> None:
        if (self.example is None) == (self.problem_file is None):
            raise ValueError("give exactly one of an example id or a problem file")
        if self.n < 3:
            raise ValueError(f"need at least 3 collocation nodes, got {self.n}")
        if self.graded < 1.0:
            raise ValueError(f"grading exponent must be >= 1, got {self.graded}")
        if self.alpha is not None and not 0.0 < self.alpha < 2.0:
            raise ValueError(f"alpha override must lie in (0, 2), got {self.alpha}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if self.adam_epochs < 0 or self.lbfgs_iters < 0:
            raise ValueError("iteration counts must be non-negative")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.eval_points < 1:
            raise ValueError("need at least one evaluation point")
        if self.threads is not None and self.threads < 1:
            raise ValueError("thread count must be positive")

    def schedule(self) -> Schedule:
        return Schedule(adam_epochs=self.adam_epochs, lbfgs_iterations=self.lbfgs_iters,
                        learning_rate=self.lr)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def load_config_problem(cfg: RunConfig) -> FddeProblem | DaeSystem:
    problem = builtin_problem(cfg.example) if cfg.example is not None else load_problem(cfg.problem_file)
    if cfg.alpha is not None:
        problem = with_order(problem, cfg.alpha)
    return problem


def with_order(problem: FddeProblem | DaeSystem, q: float) -> FddeProblem | DaeSystem:
    """Copy of *problem* whose leading derivative has order *q*.

    For systems only the states that already carry a fractional order change.
    The exact solution is dropped since it no longer applies.
    """
    order = FractionalOrder(q)
    if isinstance(problem, FddeProblem):
        if order.n_initial != problem.order.n_initial:
            raise ValueError(f"order {q} needs a different number of initial values")
        return replace(problem, order=order, exact=None, name=f"{problem.name}-q{q:g}")

    orders = tuple(order if not o.is_integer else o for o in problem.orders)
    return replace(problem, orders=orders, exact=None, name=f"{problem.name}-q{q:g}")


def make_grid(problem, n: int, graded: float = 1.0) -> Grid:
    a, b = problem.domain
    return graded_grid(a, b, n - 1, graded)


def assemble_matrices(problem, grid: Grid) -> list[CaputoMatrix | None]:
    """Operational matrix of every state with a fractional order, ``None`` otherwise."""
    orders = (problem.order,) if isinstance(problem, FddeProblem) else problem.orders
    return [None if q.is_integer else assemble_matrix(grid, q.alpha) for q in orders]


def make_networks(problem, seed: int, per_output_affine: bool = False) -> list[Network]:
    arch = problem.architecture or DDE_ARCHITECTURE
    seeds = np.random.SeedSequence(seed).generate_state(problem.n_states)
    return [
        build_network(arch, problem.domain, seed=int(s), per_output_affine=per_output_affine)
        for s in seeds
    ]


def split_params(nets: list[Network], theta: np.ndarray) -> list[Network]:
    out = []
    offset = 0
    for net in nets:
        out.append(net.with_params(theta[offset : offset + net.n_params]))
        offset += net.n_params
    return out


@dataclass
class Solution:
    problem: FddeProblem | DaeSystem
    nets: list[Network]
    result: TrainResult
    errors: list[ErrorReport | None]
    eval_x: np.ndarray
    predicted: np.ndarray
    exact: np.ndarray | None
    timings: dict[str, float] = field(default_factory=dict)


def solve_problem(problem: FddeProblem | DaeSystem, cfg: RunConfig) -> Solution:
    """Train the networks of *problem* per *cfg* and evaluate them."""
    timings = {}

    grid = make_grid(problem, cfg.n, cfg.graded)
    start = time.perf_counter()
    matrices = assemble_matrices(problem, grid)
    timings["assembly"] = time.perf_counter() - start

    start = time.perf_counter()
    model = ResidualModel(
        problem,
        grid,
        LossConfig(cfg.lam, cfg.reduction),
        use_history=cfg.use_history,
        matrices=matrices,
    )
    timings["setup"] = time.perf_counter() - start

    nets = make_networks(problem, cfg.seed, cfg.per_output_affine)
    theta0 = np.concatenate([net.parameters for net in nets])

    def objective(theta):
        return model.loss_and_grad(split_params(nets, theta))

    start = time.perf_counter()
    result = train(objective, theta0, cfg.schedule())
    timings["training"] = time.perf_counter() - start
    iterations = max(1, len(result.trace) - 1)
    timings["per_iteration"] = timings["training"] / iterations

    nets = split_params(nets, result.params)
    a, b = problem.domain
    x = np.linspace(a, b, cfg.eval_points)
    predicted = np.column_stack([net(x)[:, 0] for net in nets])

    exact = None
    errors: list[ErrorReport | None] = [None] * len(nets)
    if problem.exact is not None:
        if isinstance(problem, FddeProblem):
            exact = problem.exact_fn(x).reshape(-1, 1)
        else:
            exact = np.column_stack([problem.exact_fn(j, x) for j in range(len(nets))])
        errors = [compute_errors(predicted[:, j], exact[:, j], x) for j in range(len(nets))]

    return Solution(problem, nets, result, errors, x, predicted, exact, timings)
