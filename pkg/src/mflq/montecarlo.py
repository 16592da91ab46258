"""Monte Carlo evaluation of closed-loop strategies.

The state is simulated in its split form. Given a chain path, the
chain-measurable part ``X_2`` is deterministic and integrated with RK4
together with its running cost. The orthogonal part ``X_1`` carries all
Brownian noise and is advanced by Euler-Maruyama for many Brownian paths per
chain path, with ``X_2`` injected into its diffusion. Chain-level means are
the independent replicates used for standard errors.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .chain import one_step_matrix, path_rng, simulate_grid_path, simulate_path
from .problem import ProblemSpec, SplitCoefficients, split
from .riccati import half_grid


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo settings.

    ``scheme="rk4"`` integrates ``X_2`` and its cost with RK4; ``"euler"``
    uses explicit Euler with left-endpoint cost. ``chain_sampling="grid"``
    draws the chain from the first-order one-step matrix on the simulation
    grid instead of exponential clocks. Euler with grid sampling reproduces the
    law of the tree scheme (up to Gaussian vs. binary increments).
    """

    num_chain_paths: int = 10_000
    num_w_paths_per_chain: int = 100
    dt_sim: float = 0.01
    master_seed: int = 0
    antithetic: bool = True
    scheme: str = "rk4"
    chain_sampling: str = "exact"
    batch_size: int = 250
    threads: int = 1

    def __post_init__(self):
        if self.num_chain_paths < 2 or self.num_w_paths_per_chain < 1:
            raise ValueError("need at least 2 chain paths and 1 Brownian path per chain")
        if self.dt_sim <= 0:
            raise ValueError("dt_sim must be positive")
        if self.antithetic and self.num_w_paths_per_chain % 2:
            raise ValueError("antithetic sampling needs an even number of Brownian paths")
        if self.scheme not in ("rk4", "euler"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.chain_sampling not in ("exact", "grid"):
            raise ValueError(f"unknown chain sampling {self.chain_sampling!r}")
        if self.batch_size < 1 or self.threads < 1:
            raise ValueError("batch_size and threads must be positive")

    def steps(self, s: float, T: float) -> int:
        K = (T - s) / self.dt_sim
        Kr = int(round(K))
        if Kr < 1 or abs(K - Kr) > 1e-9 * max(1.0, K):
            raise ValueError(f"dt_sim={self.dt_sim} does not divide the horizon {T - s}")
        return Kr


@dataclass(frozen=True)
class CostReport:
    mean: float
    std_error: float
    running: float
    terminal: float
    method: str
    num_chain_paths: int = 0
    num_w_paths: int = 0
    between_var: float = 0.0
    within_var: float = 0.0
    chain_means: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def exact(cls, value: float, method: str, running: float = math.nan,
              terminal: float = math.nan) -> "CostReport":
        return cls(float(value), 0.0, running, terminal, method)

    def row(self) -> dict:
        return {"method": self.method, "mean": self.mean, "std_error": self.std_error,
                "running": self.running, "terminal": self.terminal,
                "num_chain_paths": self.num_chain_paths, "num_w_paths": self.num_w_paths,
                "between_var": self.between_var, "within_var": self.within_var}


GainFn = Callable[[np.ndarray], tuple]


@dataclass(frozen=True)
class Strategy:
    """Feedback strategy ``u = Theta_1 X_1 + Theta_2 X_2 + v_2``.

    ``gains(times)`` returns ``(Theta, v2)`` with shapes
    ``times.shape + (2, L, m, n)`` and ``times.shape + (L, m)``.
    """

    gains: GainFn
    name: str = ""

    @classmethod
    def from_solution(cls, ric, eta=None, name: str = "riccati") -> "Strategy":
        L, m = ric.Theta.shape[2], ric.Theta.shape[3]

        def gains(t):
            t = np.asarray(t, dtype=float)
            v = eta.v2_at(t) if eta is not None else np.zeros(t.shape + (L, m))
            return ric.gains_at(t), v

        return cls(gains, name)

    @classmethod
    def zero(cls, L: int, m: int, n: int) -> "Strategy":
        def gains(t):
            t = np.asarray(t, dtype=float)
            return np.zeros(t.shape + (2, L, m, n)), np.zeros(t.shape + (L, m))

        return cls(gains, "zero")

    def perturbed(self, d_theta: np.ndarray, d_v: np.ndarray, name: str = "perturbed") -> "Strategy":
        """Add constant perturbations (broadcast over time and, if omitted, regimes)."""
        base = self.gains
        d_theta = np.asarray(d_theta, dtype=float)
        d_v = np.asarray(d_v, dtype=float)
        if d_theta.ndim == 3:
            d_theta = d_theta[:, None]

        def gains(t):
            th, v = base(t)
            return th + d_theta, v + d_v

        return Strategy(gains, name)


def _mv(M, x):
    return np.einsum("...ij,...j->...i", M, x)


def _quad(M, x):
    return np.einsum("...i,...ij,...j->...", x, M, x)


@dataclass(frozen=True)
class _ClosedLoop:
    """Closed-loop coefficients per half-grid time and regime."""

    A2: np.ndarray
    beta2: np.ndarray
    M2: np.ndarray
    l2: np.ndarray
    c2: np.ndarray
    A1: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    d2: np.ndarray
    M1: np.ndarray
    G1: np.ndarray
    G2: np.ndarray
    g2: np.ndarray


def _closed_loop(sp: SplitCoefficients, strategy: Strategy, th: np.ndarray) -> _ClosedLoop:
    c = sp.sample(th)
    th_, v = strategy.gains(th)
    T1, T2 = th_[:, 0], th_[:, 1]
    tr = lambda a: np.swapaxes(a, -1, -2)
    A, B, C, D = (c[k] for k in "ABCD")
    Q, S, R = (c[k] for k in "QSR")
    A1 = A[:, 0] + B[:, 0] @ T1
    C1 = C[:, 0] + D[:, 0] @ T1
    M1 = Q[:, 0] + tr(T1) @ S[:, 0] + tr(S[:, 0]) @ T1 + tr(T1) @ R[:, 0] @ T1
    A2 = A[:, 1] + B[:, 1] @ T2
    C2 = C[:, 1] + D[:, 1] @ T2
    M2 = Q[:, 1] + tr(T2) @ S[:, 1] + tr(S[:, 1]) @ T2 + tr(T2) @ R[:, 1] @ T2
    b2, sig2, q2, r2 = c["b"][:, 1], c["sigma"][:, 1], c["q"][:, 1], c["r"][:, 1]
    beta2 = _mv(B[:, 1], v) + b2
    l2 = _mv(tr(S[:, 1]), v) + _mv(tr(T2) @ R[:, 1], v) + q2 + _mv(tr(T2), r2)
    c2 = _quad(R[:, 1], v) + 2 * (r2 * v).sum(-1)
    d2 = _mv(D[:, 1], v) + sig2
    G = sp.terminal_pairs["G"]
    return _ClosedLoop(A2, beta2, M2, l2, c2, A1, C1, C2, d2, M1, G[0], G[1], sp.terminal_pairs["g"][1])


def _regimes(spec: ProblemSpec, e0: int, cfg: SimConfig, K: int, th: np.ndarray, idx: int,
             p: np.ndarray | None) -> np.ndarray:
    rng = path_rng(cfg.master_seed, idx, 0)
    if cfg.chain_sampling == "exact":
        return simulate_path(spec.chain, e0, spec.s, spec.T, rng).state_at(th)
    nodes = simulate_grid_path(p, e0, K, rng)
    out = np.empty(2 * K + 1, dtype=int)
    out[0::2] = nodes
    out[1::2] = nodes[:-1]
    return out


def _normals(cfg: SimConfig, K: int, idx: int) -> np.ndarray:
    rng = path_rng(cfg.master_seed, idx, 1)
    nw = cfg.num_w_paths_per_chain
    if cfg.antithetic:
        z = rng.standard_normal((K, nw // 2))
        return np.concatenate([z, -z], axis=1)
    return rng.standard_normal((K, nw))


def _draws(spec, e0, cfg, K, th, idx, p):
    reg = np.stack([_regimes(spec, e0, cfg, K, th, i, p) for i in idx], axis=1)  # (2K+1, B)
    dW = np.stack([_normals(cfg, K, i) for i in idx], axis=1) * math.sqrt(cfg.dt_sim)  # (K, B, Nw)
    return reg, dW


def _simulate_batch(spec, cl: _ClosedLoop, x0, cfg, K, reg, dW):
    h = cfg.dt_sim
    B = reg.shape[1]
    n = spec.n

    def f(j, x):
        r = reg[j]
        return _mv(cl.A2[j, r], x) + cl.beta2[j, r]

    def g(j, x):
        r = reg[j]
        return 0.5 * (_quad(cl.M2[j, r], x) + 2 * (cl.l2[j, r] * x).sum(-1) + cl.c2[j, r])

    x2 = np.broadcast_to(x0, (B, n)).astype(float).copy()
    X2 = np.empty((K + 1, B, n))
    X2[0] = x2
    run2 = np.zeros(B)
    for k in range(K):
        j = 2 * k
        if cfg.scheme == "rk4":
            k1, q1 = f(j, x2), g(j, x2)
            y = x2 + 0.5 * h * k1
            k2, q2 = f(j + 1, y), g(j + 1, y)
            y = x2 + 0.5 * h * k2
            k3, q3 = f(j + 1, y), g(j + 1, y)
            y = x2 + h * k3
            k4, q4 = f(j + 2, y), g(j + 2, y)
            x2 = x2 + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            run2 += (h / 6) * (q1 + 2 * q2 + 2 * q3 + q4)
        else:
            run2 += h * g(j, x2)
            x2 = x2 + h * f(j, x2)
        X2[k + 1] = x2
    rT = reg[-1]
    term2 = 0.5 * _quad(cl.G2[rT], x2) + (cl.g2[rT] * x2).sum(-1)

    # one batched product per step: x1 @ [A1^T | C1^T | M1]
    stack = np.concatenate([np.swapaxes(cl.A1, -1, -2), np.swapaxes(cl.C1, -1, -2), cl.M1], axis=-1)
    nw = dW.shape[-1]
    x1 = np.zeros((B, nw, n))
    run1 = np.zeros((B, nw))
    for k in range(K):
        j = 2 * k
        r = reg[j]
        y = x1 @ stack[j, r]
        run1 += (0.5 * h) * (y[..., 2 * n:] * x1).sum(-1)
        shift = _mv(cl.C2[j, r], X2[k]) + cl.d2[j, r]                    # (B, n)
        x1 = x1 + h * y[..., :n] + (y[..., n:2 * n] + shift[:, None, :]) * dW[k][:, :, None]
    term1 = 0.5 * ((x1 @ cl.G1[rT]) * x1).sum(-1)
    return {"run2": run2, "term2": term2, "run1": run1, "term1": term1}


def simulate_strategies(spec: ProblemSpec, strategies: list[Strategy], x0, e0: int,
                        cfg: SimConfig = SimConfig(),
                        sp: SplitCoefficients | None = None) -> list[CostReport]:
    """Estimate the cost of several strategies on common random numbers.

    Chain paths and Brownian increments are drawn once per batch and reused
    for every strategy, so the reports can be compared path by path.
    """
    sp = sp or split(spec)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (spec.n,):
        raise ValueError(f"x0 must have shape ({spec.n},), got {x0.shape}")
    K = cfg.steps(spec.s, spec.T)
    th = half_grid(spec.s + cfg.dt_sim * np.arange(K + 1))
    th[-1] = spec.T
    loops = [_closed_loop(sp, st, th) for st in strategies]
    p = one_step_matrix(spec.chain, cfg.dt_sim).p if cfg.chain_sampling == "grid" else None
    batches = [np.arange(a, min(a + cfg.batch_size, cfg.num_chain_paths))
               for a in range(0, cfg.num_chain_paths, cfg.batch_size)]

    def work(idx):
        reg, dW = _draws(spec, e0, cfg, K, th, idx, p)
        return [_simulate_batch(spec, cl, x0, cfg, K, reg, dW) for cl in loops]

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            parts = list(pool.map(work, batches))
    else:
        parts = [work(b) for b in batches]
    out = []
    for s_i in range(len(strategies)):
        res = {k: np.concatenate([pt[s_i][k] for pt in parts]) for k in parts[0][s_i]}
        out.append(_report(res, cfg))
    return out


def simulate_closed_loop(spec: ProblemSpec, strategy: Strategy, x0, e0: int,
                         cfg: SimConfig = SimConfig(), sp: SplitCoefficients | None = None) -> CostReport:
    """Estimate the expected cost of ``strategy`` from the deterministic pair ``(x0, e0)``."""
    return simulate_strategies(spec, [strategy], x0, e0, cfg, sp)[0]


def _report(res: dict, cfg: SimConfig) -> CostReport:
    nc = cfg.num_chain_paths
    nw = cfg.num_w_paths_per_chain
    j1 = res["run1"] + res["term1"]
    chain_means = res["run2"] + res["term2"] + j1.mean(axis=1)
    total_var = float(chain_means.var(ddof=1))
    within = float((j1.var(axis=1, ddof=1) / nw).mean()) if nw > 1 else 0.0
    running = float((res["run2"] + res["run1"].mean(axis=1)).mean())
    terminal = float((res["term2"] + res["term1"].mean(axis=1)).mean())
    chain_means.setflags(write=False)
    return CostReport(float(chain_means.mean()), math.sqrt(total_var / nc), running, terminal,
                      "monte-carlo", nc, nw, max(total_var - within, 0.0), within, chain_means)


@dataclass(frozen=True)
class PairedReport:
    mean_diff: float
    std_error: float
    b_beats_a: bool
    report_a: CostReport = field(repr=False)
    report_b: CostReport = field(repr=False)

    @property
    def z(self) -> float:
        """Difference in units of its standard error (0 when both vanish)."""
        if self.std_error > 0:
            return self.mean_diff / self.std_error
        return 0.0 if self.mean_diff == 0 else math.copysign(math.inf, self.mean_diff)


def paired_difference(rep_a: CostReport, rep_b: CostReport) -> PairedReport:
    """Difference ``J_B - J_A`` from two runs that shared their random numbers."""
    d = np.asarray(rep_b.chain_means) - np.asarray(rep_a.chain_means)
    se = float(d.std(ddof=1) / math.sqrt(len(d)))
    mean = float(d.mean())
    return PairedReport(mean, se, bool(mean < -3 * se), rep_a, rep_b)


def compare_strategies(spec: ProblemSpec, strategy_a: Strategy, strategy_b, x0, e0: int,
                       cfg: SimConfig = SimConfig(), sp: SplitCoefficients | None = None):
    """Paired comparison with common random numbers; flags B beating A by more than 3 SE.

    ``strategy_b`` may be a list, in which case one report per entry is
    returned and the baseline is simulated only once.
    """
    many = isinstance(strategy_b, (list, tuple))
    others = list(strategy_b) if many else [strategy_b]
    reps = simulate_strategies(spec, [strategy_a] + others, x0, e0, cfg, sp)
    out = [paired_difference(reps[0], rb) for rb in reps[1:]]
    return out if many else out[0]
