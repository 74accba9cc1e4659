"""Command-line driver.

Subcommands
-----------
solve
    Train on a builtin example or a problem file and write a report.
validate
    Run the kernel self-checks.
bench
    Per-epoch training cost of a fractional problem against its integer-order
    counterpart.
template
    Write a commented problem-definition file.

Every ``solve`` and ``bench`` option can also be set through an environment
variable named ``FRACPINN_`` plus the option name in upper case with dashes
replaced by underscores (``--adam-epochs`` becomes ``FRACPINN_ADAM_EPOCHS``).
Command-line flags take precedence.

Exit codes: 0 success, 1 usage error, 2 validation failure, 3 divergence.

Output files of ``solve``
-------------------------
report.json
    Configuration echo, loss trace, error norms per state, solution table,
    timings and library version.
solution.csv
    ``state,x,predicted,exact,abs_error``; the last two are empty without an
    exact solution.
trace.csv
    ``iteration,phase,loss``.
timings.csv
    ``quantity,seconds``.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from contextlib import nullcontext
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from fracpinn import __version__
from fracpinn.expressions import ExpressionError
from fracpinn.optimize import DivergenceError, Schedule, train
from fracpinn.problems import builtin_problem, export_problem_template
from fracpinn.residual import REDUCTIONS, FddeProblem, LossConfig, ResidualModel
from fracpinn.solver import (
    RunConfig,
    Solution,
    assemble_matrices,
    load_config_problem,
    make_grid,
    make_networks,
    solve_problem,
    split_params,
    with_order,
)

__all__ = ["EXIT_DIVERGED", "EXIT_OK", "EXIT_USAGE", "EXIT_VALIDATION", "main"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_DIVERGED = 3

ENV_PREFIX = "FRACPINN_"
BENCH_SIZES = (51, 101, 201, 401)
BENCH_RATIO_LIMIT = 1.5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _flag(value: str) -> bool:
    low = value.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _env_defaults(parser: argparse.ArgumentParser, environ) -> None:
    """Fill parser defaults from ``FRACPINN_*`` variables."""
    values = {}
    for action in parser._actions:
        if not action.option_strings or action.dest == "help":
            continue
        name = ENV_PREFIX + action.option_strings[-1].lstrip("-").replace("-", "_").upper()
        if name not in environ:
            continue
        raw = environ[name]
        try:
            if isinstance(action, argparse._StoreTrueAction):
                values[action.dest] = _flag(raw)
            elif action.type is not None:
                values[action.dest] = action.type(raw)
            else:
                values[action.dest] = raw
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad value in {name}: {exc}") from None
        if action.choices is not None and values[action.dest] not in action.choices:
            raise UsageError(f"bad value in {name}: {raw!r} not in {list(action.choices)}")
    parser.set_defaults(**values)


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise ValueError("must be positive")
    return v


def _sizes(text: str) -> tuple[int, ...]:
    return tuple(int(s) for s in text.split(",") if s.strip())


# {{{ parser


def _add_run_options(p: argparse.ArgumentParser) -> None:
    d = RunConfig()
    p.add_argument("--n", type=int, default=d.n, help="number of collocation nodes (default %(default)s)")
    p.add_argument("--graded", type=float, default=d.graded, metavar="R",
                   help="grading exponent r >= 1 of the mesh (default %(default)s, uniform)")
    p.add_argument("--lambda", dest="lam", type=float, default=d.lam,
                   help="residual weight (default %(default)s)")
    p.add_argument("--reduction", choices=REDUCTIONS, default=d.reduction,
                   help="residual reduction of the loss (default %(default)s)")
    p.add_argument("--lr", type=float, default=d.lr, help="Adam learning rate (default %(default)s)")
    p.add_argument("--seed", type=int, default=d.seed, help="initialization seed (default %(default)s)")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded run; the report is reproducible bit for bit")
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="cap on BLAS/OpenMP threads")
    p.add_argument("--out", default=None, metavar="DIR", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fracpinn", description="Fractional delay and DAE solver based on PINNs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    d = RunConfig()
    p = sub.add_parser("solve", help="train on a problem and write a report")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--example", type=int, default=None, metavar="N", help="builtin example 1..8")
    src.add_argument("--problem", dest="problem_file", default=None, metavar="FILE", help="problem file")
    _add_run_options(p)
    p.add_argument("--alpha", type=float, default=None,
                   help="override the fractional order (drops the exact solution)")
    p.add_argument("--adam-epochs", type=int, default=d.adam_epochs, help="(default %(default)s)")
    p.add_argument("--lbfgs-iters", type=int, default=d.lbfgs_iters, help="(default %(default)s)")
    p.add_argument("--eval-points", type=int, default=d.eval_points,
                   help="uniform evaluation points for the report (default %(default)s)")
    p.add_argument("--shared-affine", action="store_true",
                   help="one affine map per polynomial block instead of one per output")
    p.add_argument("--no-history", action="store_true",
                   help="evaluate the network instead of the history function below the domain")
    p.add_argument("--quiet", action="store_true")

    sub.add_parser("validate", help="run the kernel self-checks")

    p = sub.add_parser("bench", help="time fractional against integer-order training")
    p.add_argument("--example", type=int, default=3, metavar="N", help="single-state example (default 3)")
    _add_run_options(p)
    p.add_argument("--alpha", type=float, default=0.5, help="fractional order (default %(default)s)")
    p.add_argument("--adam-epochs", type=int, default=1000, help="(default %(default)s)")
    p.add_argument("--sizes", type=_sizes, default=BENCH_SIZES, help="comma-separated node counts")

    p = sub.add_parser("template", help="write a commented problem file")
    p.add_argument("path")
    return parser


# }}}


def _threads_context(threads: int | None):
    if threads is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=threads)


def _run_config(args) -> RunConfig:
    cfg = RunConfig(
        example=args.example,
        problem_file=args.problem_file,
        n=args.n,
        graded=args.graded,
        alpha=args.alpha,
        lam=args.lam,
        reduction=args.reduction,
        adam_epochs=args.adam_epochs,
        lbfgs_iters=args.lbfgs_iters,
        lr=args.lr,
        seed=args.seed,
        deterministic=args.deterministic,
        threads=1 if args.deterministic else args.threads,
        eval_points=args.eval_points,
        use_history=not args.no_history,
        per_output_affine=not args.shared_affine,
        out=args.out,
    )
    cfg.validate()
    return cfg


# {{{ reports


def _fmt(v: float | None) -> str:
    return "" if v is None else repr(float(v))


def build_report(sol: Solution, cfg: RunConfig, status: str = "ok") -> dict[str, Any]:
    """Report document; every field except ``timings`` is deterministic."""
    names = _state_names(sol)
    solution = {"x": sol.eval_x.tolist()}
    for j, nm in enumerate(names):
        solution[f"{nm}_predicted"] = sol.predicted[:, j].tolist()
        if sol.exact is not None:
            solution[f"{nm}_exact"] = sol.exact[:, j].tolist()
    return {
        "status": status,
        "version": __version__,
        "config": cfg.to_dict(),
        "problem": {
            "name": sol.problem.name,
            "description": sol.problem.description,
            "domain": list(sol.problem.domain),
        },
        "result": {
            "loss": sol.result.loss,
            "stop_reason": sol.result.stop_reason,
            "n_evals": sol.result.n_evals,
            "flags": list(sol.result.flags),
        },
        "errors": {nm: (None if e is None else e.to_dict()) for nm, e in zip(names, sol.errors)},
        "trace": [list(row) for row in sol.result.trace],
        "solution": solution,
        "timings": dict(sol.timings),
    }


def _state_names(sol: Solution) -> list[str]:
    if len(sol.nets) == 1:
        return ["y"]
    return [f"y{j + 1}" for j in range(len(sol.nets))]


def write_outputs(out: Path, sol: Solution, cfg: RunConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(build_report(sol, cfg), indent=2) + "\n")

    names = _state_names(sol)
    with open(out / "solution.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["state", "x", "predicted", "exact", "abs_error"])
        for j, nm in enumerate(names):
            for i, x in enumerate(sol.eval_x):
                p = sol.predicted[i, j]
                e = None if sol.exact is None else sol.exact[i, j]
                w.writerow([nm, _fmt(x), _fmt(p), _fmt(e), "" if e is None else _fmt(abs(p - e))])

    _write_trace(out / "trace.csv", sol.result.trace)

    with open(out / "timings.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["quantity", "seconds"])
        for k, v in sol.timings.items():
            w.writerow([k, _fmt(v)])


def _write_trace(path: Path, trace) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "phase", "loss"])
        for it, phase, loss in trace:
            w.writerow([it, phase, _fmt(loss)])


def _default_out(cfg: RunConfig) -> Path:
    stem = f"example{cfg.example}" if cfg.example is not None else Path(cfg.problem_file).stem
    return Path(f"fracpinn-{stem}-seed{cfg.seed}")


# }}}


# {{{ commands


def cmd_solve(args) -> int:
    try:
        cfg = _run_config(args)
        problem = load_config_problem(cfg)
    except (ValueError, ExpressionError, OSError) as exc:
        print(f"fracpinn solve: error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    out = Path(cfg.out) if cfg.out else _default_out(cfg)
    start = time.perf_counter()
    try:
        with _threads_context(cfg.threads):
            sol = solve_problem(problem, cfg)
    except (DivergenceError, FloatingPointError) as exc:
        out.mkdir(parents=True, exist_ok=True)
        trace = getattr(exc, "trace", [])
        report = {
            "status": "diverged",
            "version": __version__,
            "config": cfg.to_dict(),
            "diagnostic": str(exc),
            "trace": [list(row) for row in trace],
        }
        (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
        _write_trace(out / "trace.csv", trace)
        print(f"fracpinn solve: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    sol.timings["total"] = time.perf_counter() - start

    write_outputs(out, sol, cfg)
    if not args.quiet:
        print(f"{sol.problem.name}: loss {sol.result.loss:.3e} ({sol.result.stop_reason})")
        for nm, e in zip(_state_names(sol), sol.errors):
            if e is not None:
                print(f"  {nm}: MAE {e.mae:.3e}  Linf {e.linf:.3e}  rel L2 {'-' if e.relative_l2 is None else f'{e.relative_l2:.3e}'}")
        print(f"  training {sol.timings['training']:.2f}s, report in {out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    from fracpinn.validation import run_all

    results = run_all()
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} suites passed")
    return EXIT_OK if failed == 0 else EXIT_VALIDATION


def time_training(problem, n: int, epochs: int, cfg: RunConfig) -> tuple[float, float]:
    """Matrix assembly time and mean wall time of one Adam epoch."""
    grid = make_grid(problem, n, cfg.graded)
    start = time.perf_counter()
    matrices = assemble_matrices(problem, grid)
    assembly = time.perf_counter() - start
    model = ResidualModel(problem, grid, LossConfig(cfg.lam, cfg.reduction), matrices=matrices)

    nets = make_networks(problem, cfg.seed, cfg.per_output_affine)
    theta0 = np.concatenate([net.parameters for net in nets])
    schedule = Schedule(adam_epochs=epochs, lbfgs_iterations=0, learning_rate=cfg.lr, loss_floor=0.0,
                        gradient_floor=0.0)

    start = time.perf_counter()
    result = train(lambda th: model.loss_and_grad(split_params(nets, th)), theta0, schedule)
    elapsed = time.perf_counter() - start
    return assembly, elapsed / max(1, len(result.trace) - 1)


def bench_rows(problem: FddeProblem, alpha: float, sizes: Sequence[int], epochs: int, cfg: RunConfig):
    if problem.order.is_integer:
        integer, fractional = problem, with_order(problem, problem.order.n_int - 1 + alpha)
    else:
        integer, fractional = with_order(problem, problem.order.n_initial), problem
    rows = []
    for n in sizes:
        _, t_int = time_training(integer, n, epochs, cfg)
        assembly, t_frac = time_training(fractional, n, epochs, cfg)
        rows.append({
            "n": n,
            "assembly_seconds": assembly,
            "integer_epoch_seconds": t_int,
            "fractional_epoch_seconds": t_frac,
            "ratio": t_frac / t_int,
        })
    return rows


def cmd_bench(args) -> int:
    try:
        if args.adam_epochs < 1 or any(n < 3 for n in args.sizes):
            raise ValueError("need at least one epoch and three nodes per grid")
        if not 0.0 < args.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {args.alpha}")
        problem = builtin_problem(args.example)
        if not isinstance(problem, FddeProblem):
            raise ValueError("bench needs a single-state example (1..6)")
        cfg = RunConfig(example=args.example, graded=args.graded, lam=args.lam, reduction=args.reduction,
                        lr=args.lr, seed=args.seed)
        cfg.validate()
    except ValueError as exc:
        print(f"fracpinn bench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    threads = 1 if args.deterministic else args.threads
    with _threads_context(threads):
        rows = bench_rows(problem, args.alpha, args.sizes, args.adam_epochs, cfg)

    print(f"{'n':>5} {'assembly s':>12} {'integer s/ep':>13} {'fractional s/ep':>16} {'ratio':>7}")
    for r in rows:
        print(f"{r['n']:>5} {r['assembly_seconds']:>12.3e} {r['integer_epoch_seconds']:>13.3e} "
              f"{r['fractional_epoch_seconds']:>16.3e} {r['ratio']:>7.3f}")
    ref = [r for r in rows if r["n"] == 101]
    if ref:
        ok = ref[0]["ratio"] <= BENCH_RATIO_LIMIT
        print(f"ratio at n=101: {ref[0]['ratio']:.3f} (threshold {BENCH_RATIO_LIMIT}): {'PASS' if ok else 'FAIL'}")

    out = Path(args.out) if args.out else Path("fracpinn-bench")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "bench.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    return EXIT_OK


def cmd_template(args) -> int:
    try:
        export_problem_template(args.path)
    except OSError as exc:
        print(f"fracpinn template: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"wrote {args.path}")
    return EXIT_OK


# }}}


COMMANDS = {"solve": cmd_solve, "validate": cmd_validate, "bench": cmd_bench, "template": cmd_template}


def main(argv: Sequence[str] | None = None, environ=None) -> int:
    parser = build_parser()
    environ = os.environ if environ is None else environ
    argv = list(sys.argv[1:] if argv is None else argv)

    # environment defaults apply to the chosen subcommand's parser
    subparsers = parser._subparsers._group_actions[0].choices
    try:
        for p in subparsers.values():
            _env_defaults(p, environ)
    except UsageError as exc:
        print(f"fracpinn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) if not isinstance(exc.code, str) else EXIT_USAGE
    return COMMANDS[args.command](args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
