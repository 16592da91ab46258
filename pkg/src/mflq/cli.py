"""Batch command line front end.

Exit codes: 0 success, 1 hard numerical error (a JSON error block is written
to stderr), 2 unreadable or invalid problem file or bad arguments, 3 a
verification check failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .errors import MaxIterations, MFLQError, ProblemFormatError
from .eta import solve_eta, value_function
from .montecarlo import SimConfig, Strategy, simulate_strategies
from .problem import ProblemSpec, load_problem, split, validate
from .riccati import PINV_CUTOFF, iterate_strongly_regular, pinv_cutoff, solve_bsdre
from .tree import CG_TOL, NODE_BUDGET, build_tree, solve_open_loop, verify_decoupling

COMMANDS = ("solve", "iterate", "simulate", "tree-check", "verify-all")


@dataclass(frozen=True)
class RunConfig:
    command: str
    problem_path: str | None = None
    grid: int = 2000
    tree_depth: int = 6
    mc: SimConfig = field(default_factory=SimConfig)
    out: str = "."
    seed: int = 0
    tol_pinv: float = PINV_CUTOFF
    tol_cg: float = CG_TOL
    tol_iter: float = 1e-10
    k_max: int = 30
    budget: int = NODE_BUDGET
    criteria: tuple = ()

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}")
        if self.command != "verify-all" and not self.problem_path:
            raise ValueError(f"--problem is required for {self.command}")
        if not self.out:
            raise ValueError("output directory must be nonempty")
        for name in ("tol_pinv", "tol_cg", "tol_iter"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.grid < 1 or self.tree_depth < 0 or self.k_max < 1:
            raise ValueError("grid, k_max must be positive and tree depth nonnegative")


# ------------------------------------------------------------------ helpers

def shipped_problems() -> list[Path]:
    root = resources.files("mflq") / "problems"
    return sorted(Path(str(p)) for p in root.iterdir() if p.name.endswith(".json"))


def resolve_problem(path: str) -> Path:
    """A file path, or the stem of a shipped example such as ``scalar_tanh``."""
    p = Path(path)
    if p.exists():
        return p
    for q in shipped_problems():
        if q.stem == path or q.name == path:
            return q
    raise ProblemFormatError(f"no such problem file: {path}")


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x) + 0.0, ".17g")
    return str(x)


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _matrix_names(prefix: str, a: int, b: int) -> list[str]:
    return [f"{prefix}_{i}{j}" for i in range(a) for j in range(b)]


def initial_conditions(spec: ProblemSpec):
    if spec.initial_conditions:
        return list(spec.initial_conditions)
    return [(np.ones(spec.n), e) for e in range(spec.num_regimes)]


class _Context:
    def __init__(self, cfg: RunConfig, spec: ProblemSpec | None, echo):
        self.cfg, self.spec, self.echo = cfg, spec, echo
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self._sp = self._ric = self._eta = None

    @property
    def sp(self):
        if self._sp is None:
            self._sp = split(self.spec)
        return self._sp

    @property
    def ric(self):
        if self._ric is None:
            self._ric = solve_bsdre(self.sp, self.cfg.grid)
        return self._ric

    @property
    def eta(self):
        if self._eta is None:
            self._eta = solve_eta(self.sp, self.ric)
        return self._eta


# ------------------------------------------------------------------ commands

def cmd_solve(ctx: _Context) -> int:
    spec, ric, eta = ctx.spec, ctx.ric, ctx.eta
    n, m, L = spec.n, spec.m, spec.num_regimes
    header = (["t", "regime"] + _matrix_names("P1", n, n) + _matrix_names("P2", n, n)
              + _matrix_names("Theta1", m, n) + _matrix_names("Theta2", m, n))
    rows = []
    for k, t in enumerate(ric.times):
        for e in range(L):
            rows.append([t, e, *ric.P[k, 0, e].ravel(), *ric.P[k, 1, e].ravel(),
                         *ric.Theta[k, 0, e].ravel(), *ric.Theta[k, 1, e].ravel()])
    write_csv(ctx.out / "riccati.csv", header, rows)
    header = ["t", "regime"] + [f"eta2_{i}" for i in range(n)] + [f"v2_{i}" for i in range(m)]
    rows = [[t, e, *eta.eta2[k, e], *eta.v2[k, e]]
            for k, t in enumerate(eta.times) for e in range(L)]
    write_csv(ctx.out / "eta.csv", header, rows)
    header = (["s", "regime"] + [f"x0_{i}" for i in range(n)] + ["value"]
              + _matrix_names("P1", n, n) + _matrix_names("P2", n, n))
    rows = []
    for x0, e in initial_conditions(spec):
        V = value_function(spec.s, x0, e, ric, eta, ctx.sp)
        rows.append([spec.s, e, *x0, V, *ric.P[0, 0, e].ravel(), *ric.P[0, 1, e].ravel()])
        ctx.echo(f"V(s={spec.s:g}, x0={np.array2string(np.asarray(x0), precision=6)}, "
                 f"regime {e}) = {V:.12g}; P2(s) = "
                 f"{np.array2string(ric.P[0, 1, e], precision=6).replace(chr(10), ' ')}")
    write_csv(ctx.out / "value.csv", header, rows)
    report = [f"delta_min {_fmt(ric.delta_min)}", f"psd_ok {_fmt(ric.psd_ok)}",
              f"range_ok {_fmt(ric.range_ok)}", f"riccati_residual {_fmt(ric.residual_norm)}",
              f"offset_residual {_fmt(eta.residual_norm)}", f"grid {ctx.cfg.grid}"]
    (ctx.out / "regularity.txt").write_text("\n".join(report) + "\n")
    ctx.echo(f"regularity: delta_min {ric.delta_min:.6g}, psd {ric.psd_ok}, range {ric.range_ok}")
    return 0


def cmd_iterate(ctx: _Context) -> int:
    cfg = ctx.cfg
    failure = None
    try:
        rep = iterate_strongly_regular(ctx.sp, cfg.grid, k_max=cfg.k_max, tol=cfg.tol_iter)
    except MaxIterations as exc:
        if exc.report is None:
            raise
        rep, failure = exc.report, exc
    header = ["k", "max_diff", "min_eig_decrease", "min_eig_R", "min_eig_P", "monotone"]
    write_csv(ctx.out / "iterate.csv", header,
              [[row[h] for h in header] for row in rep.table()])
    ctx.echo(f"converged {rep.converged} at k={rep.k_star}; monotone {rep.monotone_ok}; "
             f"sufficient condition {rep.hypothesis_ok}")
    if failure is not None:
        raise failure
    return 0


def cmd_tree_check(ctx: _Context) -> int:
    from .acceptance import projection_suite

    cfg, spec = ctx.cfg, ctx.spec
    lines = [f"problem {spec.name or '(unnamed)'}", f"tree depth {cfg.tree_depth}"]
    for x0, e in initial_conditions(spec):
        tree = build_tree(spec, cfg.tree_depth, e, budget=cfg.budget)
        opt = solve_open_loop(tree, spec, x0, tol=cfg.tol_cg)
        dec = verify_decoupling(tree, spec, ctx.ric, ctx.eta, x0, opt)
        V = value_function(spec.s, x0, e, ctx.ric, ctx.eta, ctx.sp)
        lines += [
            f"initial state {' '.join(_fmt(v) for v in np.atleast_1d(x0))} regime {e}",
            f"  J_star {_fmt(opt.J)}",
            f"  riccati_value {_fmt(V)}",
            f"  gradient_norm {_fmt(opt.grad_norm)}",
            f"  stationarity_residual {_fmt(opt.grad_norm / (1.0 + opt.grad0_norm))}",
            f"  cg_iterations {opt.cg_iterations} restarts {opt.restarts}",
            f"  decoupling_error {_fmt(dec.decoupling_error)}",
            f"  decoupling_error_1 {_fmt(dec.decoupling_error_1)}",
            f"  decoupling_error_2 {_fmt(dec.decoupling_error_2)}",
        ]
        ctx.echo(f"regime {e}: J* {opt.J:.10g}, Riccati value {V:.10g}, "
                 f"decoupling error {dec.decoupling_error:.3g}")
    depth = min(cfg.tree_depth, 4)
    tree = build_tree(spec, depth, 0, budget=cfg.budget)
    worst = projection_suite(tree, np.random.default_rng(cfg.seed), 50, max(1, spec.n))
    lines.append(f"projection identities at depth {depth} (50 random processes)")
    for key in ("idempotent", "self_adjoint", "orthogonal", "stochastic_integral", "bruteforce",
                "future_chain"):
        lines.append(f"  {key} {_fmt(worst[key])} {'ok' if worst[key] <= 1e-12 else 'FAIL'}")
    (ctx.out / "oracle_report.txt").write_text("\n".join(lines) + "\n")
    return 0 if max(worst.values()) <= 1e-12 else 3


def cmd_simulate(ctx: _Context) -> int:
    spec, cfg = ctx.spec, ctx.cfg
    mc = cfg.mc
    strategies = [Strategy.from_solution(ctx.ric, ctx.eta, "optimal"),
                  Strategy.zero(spec.num_regimes, spec.m, spec.n)]
    header = ["regime", "x0", "strategy", "method", "mean", "std_error", "running", "terminal",
              "num_chain_paths", "num_w_paths", "between_var", "within_var"]
    rows = []
    for x0, e in initial_conditions(spec):
        x0s = " ".join(_fmt(v) for v in np.atleast_1d(x0))
        V = value_function(spec.s, x0, e, ctx.ric, ctx.eta, ctx.sp)
        rows.append([e, x0s, "optimal", "riccati-formula", V, 0.0, "", "", 0, 0, 0.0, 0.0])
        reps = simulate_strategies(spec, strategies, x0, e, mc, ctx.sp)
        for st, rep in zip(strategies, reps):
            r = rep.row()
            rows.append([e, x0s, st.name, r["method"], r["mean"], r["std_error"], r["running"],
                         r["terminal"], r["num_chain_paths"], r["num_w_paths"],
                         r["between_var"], r["within_var"]])
        ctx.echo(f"regime {e}: Riccati value {V:.10g}, Monte Carlo {reps[0].mean:.10g} "
                 f"+/- {reps[0].std_error:.2g}, zero strategy {reps[1].mean:.10g}")
    write_csv(ctx.out / "mc_report.csv", header, rows)
    return 0


def cmd_verify_all(ctx: _Context) -> int:
    from .acceptance import format_line, run_all

    cfg = ctx.cfg
    lines = []
    files = [resolve_problem(cfg.problem_path)] if cfg.problem_path else shipped_problems()
    ok = True
    for f in files:
        spec = load_problem(f)
        rep = validate(spec)
        status = rep.passed
        detail = rep.summary()
        if status:
            sol = solve_bsdre(split(spec), cfg.grid)
            status = sol.psd_ok and sol.range_ok
            detail += f"; regular {status}"
        line = f"[{'PASS' if status else 'FAIL'}] problem {f.name}: {detail}"
        ctx.echo(line)
        lines.append(line)
        ok &= bool(status)
    results = run_all(set(cfg.criteria) or None, echo=ctx.echo)
    lines += [format_line(r) for r in results]
    ok &= all(r.passed for r in results)
    (ctx.out / "verify_report.txt").write_text("\n".join(lines) + "\n")
    return 0 if ok else 3


HANDLERS = {"solve": cmd_solve, "iterate": cmd_iterate, "simulate": cmd_simulate,
            "tree-check": cmd_tree_check, "verify-all": cmd_verify_all}


def run(cfg: RunConfig, echo=print) -> int:
    """Execute one command; returns the process exit status."""
    spec = None
    try:
        if cfg.problem_path:
            spec = load_problem(resolve_problem(cfg.problem_path))
            rep = validate(spec)
            if not rep.passed:
                raise ProblemFormatError(f"invalid problem: {rep.summary()}")
        with pinv_cutoff(cfg.tol_pinv):
            return HANDLERS[cfg.command](_Context(cfg, spec, echo))
    except ProblemFormatError as exc:
        _error_block(exc)
        return 2
    except MFLQError as exc:
        _error_block(exc)
        return 1


def _error_block(exc: MFLQError) -> None:
    block = {"error": {"kind": exc.kind, "type": type(exc).__name__, "message": str(exc),
                       **exc.details()}}
    print(json.dumps(block), file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mflq", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--problem", help="problem JSON file or name of a shipped example")
    p.add_argument("--command", required=True, choices=COMMANDS)
    p.add_argument("--grid", type=int, default=2000, help="Riccati grid intervals (default 2000)")
    p.add_argument("--tree-depth", type=int, default=6, help="tree steps N (default 6)")
    p.add_argument("--paths", type=int, default=10_000, help="Monte Carlo chain paths")
    p.add_argument("--w-paths", type=int, default=100, help="Brownian paths per chain path")
    p.add_argument("--dt-sim", type=float, default=0.01, help="Monte Carlo step")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--threads", type=int, default=1, help="worker threads for Monte Carlo")
    p.add_argument("--tol-pinv", type=float, default=PINV_CUTOFF, help="pseudo-inverse cutoff")
    p.add_argument("--tol-cg", type=float, default=CG_TOL, help="tree solver tolerance")
    p.add_argument("--tol-iter", type=float, default=1e-10, help="iteration stopping tolerance")
    p.add_argument("--k-max", type=int, default=30, help="maximum gain iterations")
    p.add_argument("--budget", type=int, default=NODE_BUDGET, help="tree node budget")
    p.add_argument("--criteria", default="", help="comma-separated acceptance criteria to run")
    return p


def config_from_args(args: argparse.Namespace) -> RunConfig:
    criteria = tuple(int(c) for c in args.criteria.split(",") if c.strip())
    mc = SimConfig(args.paths, args.w_paths, args.dt_sim, master_seed=args.seed,
                   threads=args.threads)
    return RunConfig(args.command, args.problem, args.grid, args.tree_depth, mc, args.out,
                     args.seed, args.tol_pinv, args.tol_cg, args.tol_iter, args.k_max,
                     args.budget, criteria)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
    except ValueError as exc:
        parser.print_usage(sys.stderr)
        print(f"mflq: error: {exc}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
