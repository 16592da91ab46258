"""Acceptance suite: eleven oracle and property checks at desk scale.

Every ``criterion_*`` function returns a :class:`CriterionResult` and never
raises on a failed check; errors inside a check are reported as failures.
``run_all`` runs them in order and ``format_line`` gives the one-line summary
used by the command line tool and the test suite.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .eta import regime_weights, solve_eta, value_function
from .generators import mild_scalar_problem, null_space_problem, random_problem, tanh_problem
from .montecarlo import SimConfig, Strategy, compare_strategies
from .problem import ProblemSpec, split
from .riccati import (check_strong_regularity, half_grid, iterate_strongly_regular, pinv_psd,
                      solve_bsdre)
from .tree import (adjoint, build_tree, conditional_expectation_bruteforce, cost_exact,
                   feedback_cost, feedback_rule, forward, gradient_exact, future_chain_check,
                   prepare, project_M, solution_gains, solve_open_loop)

RANDOM_SEEDS = (101, 102, 103, 104, 105)
TREE_SEEDS = (0, 1, 3)
FEEDBACK_SEEDS = (0, 1, 4)
MC_SEED = 1


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    summary: str
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0


def format_line(res: CriterionResult) -> str:
    tag = "PASS" if res.passed else "FAIL"
    return f"[{tag}] {res.number:2d} {res.title}: {res.summary} ({res.seconds:.1f} s)"


def _timed(number: int, title: str, fn: Callable[[], tuple]) -> CriterionResult:
    t0 = time.perf_counter()
    try:
        passed, summary, metrics = fn()
    except Exception as exc:  # a crash is a failed criterion, not a crashed suite
        passed, summary, metrics = False, f"{type(exc).__name__}: {exc}", {}
    return CriterionResult(number, title, bool(passed), summary, metrics,
                           time.perf_counter() - t0)


def _order(dts, errs) -> float:
    """Least-squares slope of log|err| against log dt."""
    errs = np.abs(np.asarray(errs, dtype=float))
    if np.any(errs == 0):
        return math.inf
    return float(np.polyfit(np.log(dts), np.log(errs), 1)[0])


def random_suite(seeds=RANDOM_SEEDS) -> list[ProblemSpec]:
    """Two-regime ``n = m = 2`` problems with ``R_i >= I``, ``Q_i >= 0``, ``G_i >= 0``."""
    return [random_problem(np.random.default_rng(s), 2, 2, 2, name=f"random-{s}") for s in seeds]


def homogeneous(spec: ProblemSpec) -> ProblemSpec:
    """Same problem with every nonhomogeneous term set to zero."""
    dims = {"b": spec.n, "sigma": spec.n, "q": spec.n, "q_bar": spec.n, "r": spec.m,
            "r_bar": spec.m, "g": spec.n, "g_bar": spec.n}
    return spec.replace(**{k: np.zeros(d) for k, d in dims.items()})


# ------------------------------------------------------------------ Riccati

def criterion_1(grid: int = 2000, repeats: int = 3) -> CriterionResult:
    def run():
        sp = split(tanh_problem())
        best = math.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            sol = solve_bsdre(sp, grid)
            best = min(best, time.perf_counter() - t0)
        err = float(np.abs(sol.P[:, 1, 0, 0, 0] - np.tanh(1.0 - sol.times)).max())
        err = max(err, float(np.abs(sol.P[:, 0, 0, 0, 0] - np.tanh(1.0 - sol.times)).max()))
        ok = err <= 1e-8 and best < 1.0
        return ok, f"max error {err:.2e}, runtime {best:.3f} s", {"error": err, "runtime": best}

    return _timed(1, "scalar closed form", run)


def criterion_2(grids=(20, 40, 80, 160)) -> CriterionResult:
    def run():
        ratios = []
        for spec in random_suite():
            sp = split(spec)
            res = [solve_bsdre(sp, g).residual_norm for g in grids]
            ratios.append([res[j] / res[j + 1] for j in range(len(res) - 1)])
        ratios = np.array(ratios)
        ok = bool(np.all(np.abs(ratios - 16) <= 4))
        return ok, f"defect ratios in [{ratios.min():.2f}, {ratios.max():.2f}]", {"ratios": ratios}

    return _timed(2, "Riccati defect order", run)


def criterion_3(grid: int = 2000) -> CriterionResult:
    def run():
        worst_dec, worst_diff, worst_k = math.inf, 0.0, 0
        for spec in random_suite():
            sp = split(spec)
            rep = iterate_strongly_regular(sp, grid)
            ref = solve_bsdre(sp, grid)
            decs = [s.min_eig_decrease for s in rep.steps[1:]]
            worst_dec = min([worst_dec] + decs)
            worst_diff = max(worst_diff, float(np.abs(rep.solution.P - ref.P).max()))
            worst_k = max(worst_k, rep.k_star)
        ok = worst_dec >= -1e-7 and worst_diff <= 1e-6 and 0 < worst_k <= 30
        return ok, (f"min eig(P^k - P^k+1) {worst_dec:.2e}, fixed point gap {worst_diff:.2e}, "
                    f"max iterations {worst_k}"), \
            {"min_decrease": worst_dec, "gap": worst_diff, "iterations": worst_k}

    return _timed(3, "monotone iteration", run)


def criterion_4(delta: float = 0.5) -> CriterionResult:
    def run():
        worst = math.inf
        for s in RANDOM_SEEDS:
            spec = random_problem(np.random.default_rng(s), 2, 2, 2, r_floor=delta,
                                  control_noise=False)
            if np.any(spec.coefficients["D"]) or np.any(spec.coefficients["D_bar"]):
                return False, "generator produced a nonzero D", {}
            sol = solve_bsdre(split(spec))
            if not check_strong_regularity(sol, delta - 1e-9):
                return False, f"delta_min {sol.delta_min:.6g} below {delta}", {}
            worst = min(worst, sol.delta_min)
        return worst >= delta - 1e-9, f"delta_min {worst:.6f} >= {delta}", {"delta_min": worst}

    return _timed(4, "strong regularity", run)


# ------------------------------------------------------------------ tree oracle

def criterion_5(depths=(4, 6, 8), x0: float = 1.0) -> CriterionResult:
    def run():
        orders, rels, t8 = [], [], 0.0
        for s in TREE_SEEDS:
            spec = mild_scalar_problem(np.random.default_rng(s))
            sp = split(spec)
            ric = solve_bsdre(sp)
            eta = solve_eta(sp, ric)
            V = value_function(spec.s, [x0], 0, ric, eta, sp)
            errs = []
            for N in depths:
                t0 = time.perf_counter()
                opt = solve_open_loop(build_tree(spec, N), spec, [x0])
                if N == depths[-1]:
                    t8 = max(t8, time.perf_counter() - t0)
                errs.append(opt.J - V)
            orders.append(_order(1.0 / np.array(depths), errs))
            rels.append(abs(errs[-1]) / abs(V))
        ok = min(orders) >= 0.8 and max(rels) <= 0.05 and t8 < 60
        return ok, (f"orders {', '.join(f'{o:.2f}' for o in orders)}; N={depths[-1]} relative "
                    f"error <= {max(rels):.3f}; {t8:.2f} s"), \
            {"orders": orders, "relative_errors": rels, "runtime": t8}

    return _timed(5, "tree vs value function", run)


def _weighted_norm(tree, levels) -> float:
    return math.sqrt(sum(tree.dt * float(tree.prob[k] @ (g ** 2).sum(-1))
                         for k, g in enumerate(levels)))


def criterion_6(depths=(4, 6, 8, 10), x0: float = 1.0) -> CriterionResult:
    def run():
        worst_opt, orders, consts = 0.0, [], []
        for s in TREE_SEEDS:
            spec = mild_scalar_problem(np.random.default_rng(s))
            opt = solve_open_loop(build_tree(spec, 6), spec, [x0])
            worst_opt = max(worst_opt, opt.grad_norm / (1.0 + opt.grad0_norm))
            sp = split(spec)
            ric = solve_bsdre(sp)
            eta = solve_eta(sp, ric)
            res = []
            for N in depths:
                tree = build_tree(spec, N)
                data = prepare(tree, spec, [x0])
                tr = forward(data, feedback_rule(data, solution_gains(ric, eta)))
                res.append(_weighted_norm(tree, adjoint(data, tr).grad))
            dts = 1.0 / np.array(depths)
            orders.append(_order(dts, res))
            consts.append(float(np.max(np.array(res) / dts)))
        ok = worst_opt <= 1e-10 and min(orders) >= 0.8
        return ok, (f"optimum residual {worst_opt:.1e} x (1+scale); feedback residual orders "
                    f"{', '.join(f'{o:.2f}' for o in orders)}, C <= {max(consts):.3f}"), \
            {"optimum": worst_opt, "orders": orders, "constants": consts}

    return _timed(6, "stationarity", run)


def criterion_7(num_directions: int = 20, N: int = 3, step: float = 1e-3) -> CriterionResult:
    def run():
        worst = 0.0
        for s in RANDOM_SEEDS:
            rng = np.random.default_rng(s + 1000)
            spec = random_problem(np.random.default_rng(s), 2, 2, 2, max_rate=1.0)
            tree = build_tree(spec, N)
            x0 = rng.normal(size=spec.n)
            u = [rng.normal(size=(tree.size(k), spec.m)) for k in range(N)]
            g = gradient_exact(tree, spec, u, x0)
            for _ in range(num_directions):
                d = [rng.normal(size=a.shape) for a in u]
                jp = cost_exact(tree, spec, [a + step * b for a, b in zip(u, d)], x0)
                jm = cost_exact(tree, spec, [a - step * b for a, b in zip(u, d)], x0)
                fd = (jp - jm) / (2 * step)
                an = sum(tree.dt * float(tree.prob[k] @ (g[k] * d[k]).sum(-1)) for k in range(N))
                worst = max(worst, abs(fd - an) / max(abs(an), 1e-12))
        return worst <= 1e-6, f"max relative error {worst:.2e}", {"error": worst}

    return _timed(7, "gradient check", run)


def projection_suite(tree, rng: np.random.Generator, num_processes: int = 100,
                     dim: int = 2) -> dict:
    """Largest defects of the chain-projection identities over random processes.

    Keys: ``idempotent``, ``self_adjoint``, ``orthogonal``,
    ``stochastic_integral`` (Brownian integrals have zero chain-conditional
    mean), ``bruteforce`` (level projection vs explicit class sums) and
    ``future_chain`` (conditioning on the chain up to ``k`` vs on its whole path).
    All values are scaled by the process size.
    """
    N = tree.N
    worst = {"idempotent": 0.0, "self_adjoint": 0.0, "orthogonal": 0.0,
             "stochastic_integral": 0.0, "bruteforce": 0.0, "future_chain": 0.0}

    def inner(a, b):
        return sum(tree.dt * float(tree.prob[k] @ (a[k] * b[k]).sum(-1)) for k in range(len(a)))

    for _ in range(num_processes):
        phi = [rng.normal(size=(tree.size(k), dim)) for k in range(N + 1)]
        psi = [rng.normal(size=(tree.size(k), dim)) for k in range(N + 1)]
        p1, p2 = project_M(tree, phi)
        _, q2 = project_M(tree, psi)
        scale = max(1.0, max(float(np.abs(a).max()) for a in phi + psi))
        twice = project_M(tree, p2)[1]
        worst["idempotent"] = max(worst["idempotent"], max(
            float(np.abs(a - b).max()) for a, b in zip(twice, p2)) / scale)
        worst["self_adjoint"] = max(worst["self_adjoint"],
                                    abs(inner(p2, psi) - inner(phi, q2)) / scale ** 2)
        worst["orthogonal"] = max(worst["orthogonal"], abs(inner(p1, q2)) / scale ** 2)
        integral = np.zeros((tree.size(N), dim))
        for k in range(N):
            dW = tree.W[k + 1] - tree.lift(k, tree.W[k], k + 1)
            integral = integral + tree.lift(k + 1, tree.lift(k, phi[k], k + 1) * dW[:, None], N)
        cond = tree.project(N, integral)
        worst["stochastic_integral"] = max(
            worst["stochastic_integral"], float(np.abs(cond).max()) / scale,
            abs(float(tree.prob[N] @ (integral * q2[N]).sum(-1))) / scale ** 2)
        k = int(rng.integers(0, N + 1))
        brute = conditional_expectation_bruteforce(tree, phi[k], k, k)
        worst["bruteforce"] = max(worst["bruteforce"], float(np.abs(brute - p2[k]).max()) / scale)
        _, err = future_chain_check(tree, phi[k], k)
        worst["future_chain"] = max(worst["future_chain"], err / scale)
    return worst


def criterion_8(num_processes: int = 100, N: int = 4, seed: int = 8) -> CriterionResult:
    def run():
        spec = random_problem(np.random.default_rng(seed), 2, 1, 1, max_rate=1.5)
        worst = projection_suite(build_tree(spec, N), np.random.default_rng(seed), num_processes)
        top = max(worst.values())
        return top <= 1e-12, f"largest defect {top:.1e} over {num_processes} processes", worst

    return _timed(8, "projection suite", run)


def closed_loop_identity(spec: ProblemSpec, depths=(4, 6, 8, 10), x0=(1.0,), e0: int = 0,
                         offset: Callable | None = None):
    """Tree cost of (Riccati gains, chain-measurable offset ``v``) on the
    homogeneous problem against ``1/2 <P_2(s) x0, x0> + 1/2 E int <R_2 v, v> dt``.

    Returns ``(formula, tree_costs)``.
    """
    spec = homogeneous(spec)
    sp = split(spec)
    ric = solve_bsdre(sp)
    L, m = spec.num_regimes, spec.m
    if offset is None:
        def offset(t):
            t = np.asarray(t, dtype=float)
            cols = [0.5 * np.cos(t + e) + 0.3 * e for e in range(L)]
            return np.broadcast_to(np.stack(cols, -1)[..., None], t.shape + (L, m))

    x0 = np.asarray(x0, dtype=float)
    th = half_grid(ric.times)
    _, Rc, _ = ric.maps_at(th)
    v = offset(th)
    quad = np.einsum("tei,teij,tej->te", v, Rc[:, 1], v)
    g = (regime_weights(sp.rates, e0, th) * quad).sum(-1)
    h = np.diff(ric.times)
    integral = float(np.sum(h / 6 * (g[0:-1:2] + 4 * g[1::2] + g[2::2])))
    formula = 0.5 * float(x0 @ ric.P[0, 1, e0] @ x0) + 0.5 * integral

    def gains(t):
        return ric.gains_at(t), offset(t)

    costs = [feedback_cost(build_tree(spec, N, e0), spec, gains, x0)["total"] for N in depths]
    return formula, costs


def criterion_9(depths=(4, 6, 8, 10)) -> CriterionResult:
    def run():
        worst_form = 0.0
        for s in RANDOM_SEEDS:
            rng = np.random.default_rng(s + 2000)
            spec = random_problem(np.random.default_rng(s), 2, 2, 2)
            tree = build_tree(spec, 4)
            x0 = rng.normal(size=spec.n)
            u = [rng.normal(size=(tree.size(k), spec.m)) for k in range(tree.N)]
            a = cost_exact(tree, spec, u, x0, form="original")
            b = cost_exact(tree, spec, u, x0, form="decomposed")
            worst_form = max(worst_form, abs(a - b) / max(1.0, abs(a)))
        orders = []
        for s in FEEDBACK_SEEDS:
            formula, costs = closed_loop_identity(mild_scalar_problem(np.random.default_rng(s)),
                                                  depths)
            orders.append(_order(1.0 / np.array(depths), np.array(costs) - formula))
        ok = worst_form <= 1e-12 and min(orders) >= 0.8
        return ok, (f"cost forms differ by {worst_form:.1e}; feedback identity orders "
                    f"{', '.join(f'{o:.2f}' for o in orders)}"), \
            {"form_gap": worst_form, "orders": orders}

    return _timed(9, "cost forms and feedback identity", run)


# ------------------------------------------------------------------ Monte Carlo

def criterion_10(cfg: SimConfig | None = None, num_perturbations: int = 10,
                 eps: float = 0.1) -> CriterionResult:
    cfg = cfg or SimConfig()

    def run():
        rng = np.random.default_rng(MC_SEED + 10)
        spec = mild_scalar_problem(np.random.default_rng(MC_SEED))
        sp = split(spec)
        ric = solve_bsdre(sp)
        eta = solve_eta(sp, ric)
        best = Strategy.from_solution(ric, eta, "optimal")
        L, m, n = spec.num_regimes, spec.m, spec.n
        others = [best.perturbed(eps * rng.normal(size=(2, L, m, n)), eps * rng.normal(size=(L, m)),
                                 name=f"perturbed-{j}") for j in range(num_perturbations)]
        t0 = time.perf_counter()
        reps = compare_strategies(spec, best, others, [1.0], 0, cfg, sp)
        elapsed = time.perf_counter() - t0
        z = [r.z for r in reps]
        ok = all(r.mean_diff >= -3 * r.std_error for r in reps) and elapsed < 120
        return ok, (f"{sum(r.mean_diff >= -3 * r.std_error for r in reps)}/{len(reps)} perturbations "
                    f"lose, min z {min(z):.1f}, {elapsed:.1f} s"), \
            {"z": z, "runtime": elapsed}

    return _timed(10, "closed-loop optimality", run)


def criterion_11(N: int = 6, seed: int = 11) -> CriterionResult:
    def run():
        spec = null_space_problem()
        sp = split(spec)
        ric = solve_bsdre(sp)
        eta = solve_eta(sp, ric)
        base = solution_gains(ric, eta)
        theta0 = np.random.default_rng(seed).normal(size=(2, spec.num_regimes, spec.m, spec.n))

        def shifted(t):
            th, v = base(t)
            _, Rc, _ = ric.maps_at(t)
            rp = pinv_psd(Rc)
            return th + (np.eye(spec.m) - rp.pinv @ Rc) @ theta0, v

        tree = build_tree(spec, N)
        a = feedback_cost(tree, spec, base, [0.7])["total"]
        b = feedback_cost(tree, spec, shifted, [0.7])["total"]
        moved = float(np.abs(shifted(0.5)[0] - base(0.5)[0]).max())
        ok = abs(a - b) <= 1e-9 and moved > 1e-3 and ric.range_ok
        return ok, f"cost gap {abs(a - b):.1e} with gain shift {moved:.2f}", \
            {"gap": abs(a - b), "shift": moved}

    return _timed(11, "null-space invariance", run)


CRITERIA = (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10, criterion_11)


def run_all(selected=None, echo: Callable[[str], None] | None = None) -> list[CriterionResult]:
    out = []
    for j, fn in enumerate(CRITERIA, start=1):
        if selected and j not in selected:
            continue
        res = fn()
        if echo:
            echo(format_line(res))
        out.append(res)
    return out
