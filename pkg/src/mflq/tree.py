"""Exact discrete-time oracle on a finite probability tree.

Each step branches into ``2 * L`` children: a Brownian increment of
``+sqrt(dt)`` or ``-sqrt(dt)`` (probability 1/2 each) times the next regime
(probability from the first-order transition matrix). Conditional
expectations are finite sums, so the discrete cost, its gradient and the
chain projection are computed exactly.

Node layout
-----------
Level ``k`` has ``(2L)**k`` nodes. The child of node ``j`` with Brownian digit
``w`` (0 for ``+``, 1 for ``-``) and regime ``e`` has index
``j * 2L + w * L + e``. Hence ``index % L`` is the node's current regime for
``k >= 1``, and reshaping a level to ``(2, L) * k`` exposes the digits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .chain import one_step_matrix
from .errors import DimensionError, NonConvex, TreeBudgetError
from .problem import TERMINAL_FIELDS, ProblemSpec

NODE_BUDGET = 5_000_000
CG_TOL = 1e-10

OVERRIDABLE = ("b", "sigma", "q", "r")


@dataclass(frozen=True)
class TreeModel:
    """Tree geometry and probabilities (independent of the cost data)."""

    N: int
    s: float
    T: float
    dt: float
    L: int
    e0: int
    p: np.ndarray
    regime: tuple
    prob: tuple
    W: tuple
    chain_class: tuple

    @property
    def K(self) -> int:
        return 2 * self.L

    @property
    def times(self) -> np.ndarray:
        return self.s + self.dt * np.arange(self.N + 1)

    def size(self, k: int) -> int:
        return self.K ** k

    @property
    def num_nodes(self) -> int:
        return sum(self.size(k) for k in range(self.N + 1))

    @property
    def signs(self) -> np.ndarray:
        """Brownian sign for each child digit ``w * L + e``."""
        return np.repeat([1.0, -1.0], self.L)

    def positive(self, k: int) -> np.ndarray:
        return self.prob[k] > 0

    # ------------------------------------------------------------ projections

    def project(self, k: int, arr: np.ndarray) -> np.ndarray:
        """Conditional expectation given the chain history up to level ``k``.

        Within one chain-history class all Brownian digit patterns have the
        same probability, so the projection is a plain mean over the digit
        axes.
        """
        arr = np.asarray(arr, dtype=float)
        if k == 0:
            return arr.copy()
        tail = arr.shape[1:]
        a = arr.reshape((2, self.L) * k + tail)
        mean = a.mean(axis=tuple(range(0, 2 * k, 2)), keepdims=True)
        return np.broadcast_to(mean, a.shape).reshape(arr.shape)

    def expect_children(self, k: int, Y: np.ndarray):
        """``E_k[Y_{k+1}]`` and ``E_k[Y_{k+1} dW] / dt`` for a level ``k+1`` array."""
        n_par = self.size(k)
        Yc = Y.reshape((n_par, 2, self.L) + Y.shape[1:])
        cw = 0.5 * self.p[self.regime[k]]
        extra = (1,) * (Y.ndim - 1)
        cw = cw.reshape((n_par, self.L) + extra)
        plus = (cw * Yc[:, 0]).sum(axis=1)
        minus = (cw * Yc[:, 1]).sum(axis=1)
        return plus + minus, (plus - minus) / np.sqrt(self.dt)

    def expectation(self, k: int, arr: np.ndarray) -> np.ndarray:
        return np.tensordot(self.prob[k], arr, axes=(0, 0))

    def lift(self, k: int, arr: np.ndarray, level: int) -> np.ndarray:
        """Copy level-``k`` node values to all descendants at ``level``."""
        return np.repeat(arr, self.K ** (level - k), axis=0)


def build_tree(spec: ProblemSpec, N: int, e0: int = 0, budget: int = NODE_BUDGET) -> TreeModel:
    """Enumerate all nodes of the depth-``N`` tree started in regime ``e0``."""
    L = spec.num_regimes
    if not 0 <= e0 < L:
        raise IndexError(f"regime {e0} out of range")
    if N < 0:
        raise ValueError("N must be nonnegative")
    K = 2 * L
    total = sum(K ** k for k in range(N + 1))
    if total > budget:
        raise TreeBudgetError(f"tree with N={N} and {L} regimes has {total} nodes "
                              f"(budget {budget})", total)
    dt = (spec.T - spec.s) / N if N > 0 else spec.T - spec.s
    p = one_step_matrix(spec.chain, dt).p if N > 0 else np.eye(L)
    digits = np.arange(K)
    e_d = digits % L
    sign = np.where(digits // L == 0, 1.0, -1.0) * np.sqrt(dt)
    regime = [np.array([e0])]
    prob = [np.array([1.0])]
    W = [np.array([0.0])]
    cls = [np.array([0])]
    for k in range(N):
        regime.append(np.tile(e_d, K ** k))
        prob.append((prob[k][:, None] * 0.5 * p[regime[k]][:, e_d]).ravel())
        W.append((W[k][:, None] + sign[None, :]).ravel())
        cls.append((cls[k][:, None] * L + e_d[None, :]).ravel())
    for arrs in (regime, prob, W, cls):
        for a in arrs:
            a.setflags(write=False)
    return TreeModel(N, spec.s, spec.T, dt, L, e0, p, tuple(regime), tuple(prob), tuple(W), tuple(cls))


def project_M(tree: TreeModel, phi: Sequence[np.ndarray]):
    """Split an adapted process into chain-orthogonal and chain-measurable parts.

    Returns ``(pi1, pi2)`` as lists of level arrays.
    """
    pi2 = [tree.project(k, np.asarray(a, float)) for k, a in enumerate(phi)]
    pi1 = [np.asarray(a, float) - b for a, b in zip(phi, pi2)]
    return pi1, pi2


def conditional_expectation_bruteforce(tree: TreeModel, arr: np.ndarray, level: int,
                                       cond_level: int) -> np.ndarray:
    """Conditional expectation of a level-``level`` array given the chain path up
    to ``cond_level >= level``, by explicit probability-weighted class sums.

    The result lives on ``cond_level`` nodes. Classes of probability zero get 0.
    """
    vals = tree.lift(level, np.asarray(arr, float), cond_level)
    prob = tree.prob[cond_level]
    cls = tree.chain_class[cond_level]
    ncls = tree.L ** cond_level
    den = np.bincount(cls, weights=prob, minlength=ncls)
    flat = vals.reshape(len(prob), -1)
    num = np.stack([np.bincount(cls, weights=prob * flat[:, j], minlength=ncls)
                    for j in range(flat.shape[1])], axis=-1)
    safe = np.where(den > 0, den, 1.0)
    ce = np.where(den[:, None] > 0, num / safe[:, None], 0.0)
    return ce[cls].reshape(vals.shape)


def future_chain_check(tree: TreeModel, xi: np.ndarray, k: int, tol: float = 1e-12):
    """Compare conditioning on the chain up to level ``k`` with conditioning on its whole path.

    Returns ``(ok, max_error)`` over positive-probability nodes.
    """
    N = tree.N
    partial = conditional_expectation_bruteforce(tree, xi, k, k)
    lhs = tree.lift(k, partial, N)
    rhs = conditional_expectation_bruteforce(tree, xi, k, N)
    mask = tree.positive(N)
    err = float(np.abs(lhs - rhs)[mask].max()) if mask.any() else 0.0
    scale = max(1.0, float(np.abs(np.asarray(xi)).max()))
    return err <= tol * scale, err


# ----------------------------------------------------------------- problem data

@dataclass(frozen=True)
class TreeData:
    """Coefficients sampled at tree times and arranged per level.

    ``levels[k][name]`` has shape ``(L_k,) + tail`` with ``L_k = 1`` at level 0
    (the start regime) and ``L`` otherwise. Nonhomogeneous terms are stored
    per node in ``node[k][name]`` so general adapted data can be supplied.
    """

    tree: TreeModel
    n: int
    m: int
    levels: tuple
    node: tuple
    terminal: Mapping[str, np.ndarray]
    x0: np.ndarray


def _per_node(tree: TreeModel, k: int, v: np.ndarray) -> np.ndarray:
    Lk = v.shape[0]
    return np.broadcast_to(v[None], (tree.size(k) // Lk,) + v.shape).reshape((tree.size(k),) + v.shape[1:]).copy()


def prepare(tree: TreeModel, spec: ProblemSpec, x0, overrides: Mapping | None = None) -> TreeData:
    """Sample ``spec`` on the tree.

    ``overrides`` may replace ``b``, ``sigma``, ``q``, ``r`` (lists of level
    arrays for levels ``0..N-1``) and ``g`` (a single level-``N`` array) with
    arbitrary adapted processes.
    """
    overrides = dict(overrides or {})
    bad = set(overrides) - set(OVERRIDABLE) - {"g"}
    if bad:
        raise DimensionError(f"cannot override {sorted(bad)}")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (spec.n,):
        raise DimensionError(f"x0 has shape {x0.shape}, expected ({spec.n},)")
    levels, node = [], []
    for k in range(tree.N + 1):
        c = spec.at_time(min(tree.s + k * tree.dt, spec.T))
        if k == 0:
            c = {key: v[tree.e0:tree.e0 + 1] for key, v in c.items()}
        nd = {}
        for key in OVERRIDABLE:
            if key in overrides and k < tree.N:
                arr = np.asarray(overrides[key][k], dtype=float)
                nd[key] = arr.reshape(tree.size(k), -1)
            else:
                nd[key] = _per_node(tree, k, c[key])
        for key in ("q_bar", "r_bar"):
            nd[key] = _per_node(tree, k, c[key])
        levels.append(c)
        node.append(nd)
    term = {key: (v[tree.e0:tree.e0 + 1] if tree.N == 0 else v) for key, v in spec.terminal.items()}
    term_node = {"g": _per_node(tree, tree.N, term["g"]), "g_bar": _per_node(tree, tree.N, term["g_bar"])}
    if "g" in overrides:
        term_node["g"] = np.asarray(overrides["g"], dtype=float).reshape(tree.size(tree.N), -1)
    term = {**term, **{"g_node": term_node["g"], "g_bar_node": term_node["g_bar"]}}
    assert set(TERMINAL_FIELDS) <= set(term)
    return TreeData(tree, spec.n, spec.m, tuple(levels), tuple(node), term, x0)


def _mv(M: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Apply per-regime matrices ``M`` (``(L_k, a, b)``) to node vectors ``x``."""
    Lk = M.shape[0]
    out = np.einsum("lab,jlb->jla", M, x.reshape(-1, Lk, x.shape[-1]))
    return out.reshape(x.shape[0], M.shape[1])


def _mtv(M: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Apply transposed per-regime matrices."""
    Lk = M.shape[0]
    out = np.einsum("lba,jlb->jla", M, x.reshape(-1, Lk, x.shape[-1]))
    return out.reshape(x.shape[0], M.shape[2])


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a * b).sum(axis=-1)


# ------------------------------------------------------------- forward / adjoint

@dataclass
class Trajectory:
    X: list
    PX: list
    u: list
    Pu: list


ControlRule = Callable[[int, np.ndarray, np.ndarray], np.ndarray]


def forward(data: TreeData, control, homogeneous: bool = False) -> Trajectory:
    """Euler recursion of the state with exact chain projections.

    ``control`` is either a list of level arrays or a rule
    ``(k, X_k, PX_k) -> u_k`` for feedback controls.
    """
    tree = data.tree
    sq = np.sqrt(tree.dt)
    signs = tree.signs
    X = [np.zeros((1, data.n)) if homogeneous else data.x0[None, :].copy()]
    PX, U, PU = [], [], []
    for k in range(tree.N):
        c, nd = data.levels[k], data.node[k]
        x = X[k]
        px = tree.project(k, x)
        u = control(k, x, px) if callable(control) else np.asarray(control[k], dtype=float)
        u = u.reshape(tree.size(k), data.m)
        pu = tree.project(k, u)
        drift = _mv(c["A"], x) + _mv(c["A_bar"], px) + _mv(c["B"], u) + _mv(c["B_bar"], pu)
        diff = _mv(c["C"], x) + _mv(c["C_bar"], px) + _mv(c["D"], u) + _mv(c["D_bar"], pu)
        if not homogeneous:
            drift = drift + nd["b"]
            diff = diff + nd["sigma"]
        nxt = (x + tree.dt * drift)[:, None, :] + diff[:, None, :] * (signs[None, :, None] * sq)
        X.append(nxt.reshape(-1, data.n))
        PX.append(px)
        U.append(u)
        PU.append(pu)
    PX.append(tree.project(tree.N, X[tree.N]))
    return Trajectory(X, PX, U, PU)


def _running(data: TreeData, k: int, x, px, u, pu, homogeneous=False):
    c, nd = data.levels[k], data.node[k]
    f = 0.5 * (_dot(_mv(c["Q"], x), x) + _dot(_mv(c["Q_bar"], px), px)
               + 2 * _dot(_mv(c["S"], x), u) + 2 * _dot(_mv(c["S_bar"], px), pu)
               + _dot(_mv(c["R"], u), u) + _dot(_mv(c["R_bar"], pu), pu))
    if not homogeneous:
        f = f + _dot(nd["q"], x) + _dot(nd["q_bar"], px) + _dot(nd["r"], u) + _dot(nd["r_bar"], pu)
    return f


def _terminal(data: TreeData, x, px, homogeneous=False):
    t = data.terminal
    f = 0.5 * (_dot(_mv(t["G"], x), x) + _dot(_mv(t["G_bar"], px), px))
    if not homogeneous:
        f = f + _dot(t["g_node"], x) + _dot(t["g_bar_node"], px)
    return f


def trajectory_cost(data: TreeData, tr: Trajectory, homogeneous: bool = False) -> dict:
    tree = data.tree
    run = sum(tree.dt * float(tree.prob[k] @ _running(data, k, tr.X[k], tr.PX[k], tr.u[k],
                                                      tr.Pu[k], homogeneous))
              for k in range(tree.N))
    term = float(tree.prob[tree.N] @ _terminal(data, tr.X[tree.N], tr.PX[tree.N], homogeneous))
    return {"total": run + term, "running": run, "terminal": term}


def decomposed_cost(data: TreeData, tr: Trajectory) -> float:
    """Cost evaluated through the split state/control and split weights."""
    tree = data.tree
    total = 0.0
    for k in range(tree.N + 1):
        x2, x1 = tr.PX[k], tr.X[k] - tr.PX[k]
        last = k == tree.N
        c = data.terminal if last else data.levels[k]
        if last:
            Qp = (c["G"], c["G"] + c["G_bar"])
            qv = c["g_node"]
            q_split = (qv - tree.project(k, qv), tree.project(k, qv) + c["g_bar_node"])
        else:
            nd = data.node[k]
            u2, u1 = tr.Pu[k], tr.u[k] - tr.Pu[k]
            Qp = (c["Q"], c["Q"] + c["Q_bar"])
            Sp = (c["S"], c["S"] + c["S_bar"])
            Rp = (c["R"], c["R"] + c["R_bar"])
            q_split = (nd["q"] - tree.project(k, nd["q"]), tree.project(k, nd["q"]) + nd["q_bar"])
            r_split = (nd["r"] - tree.project(k, nd["r"]), tree.project(k, nd["r"]) + nd["r_bar"])
        f = 0.0
        for i, (xi, qi) in enumerate(zip((x1, x2), q_split)):
            fi = _dot(_mv(Qp[i], xi), xi) + 2 * _dot(qi, xi)
            if not last:
                ui = (u1, u2)[i]
                fi = fi + 2 * _dot(_mv(Sp[i], xi), ui) + _dot(_mv(Rp[i], ui), ui) \
                    + 2 * _dot(r_split[i], ui)
            f = f + 0.5 * fi
        w = 1.0 if last else tree.dt
        total += w * float(tree.prob[k] @ f)
    return total


@dataclass
class Adjoint:
    Y: list
    Ybar: list
    Z: list
    grad: list


def adjoint(data: TreeData, tr: Trajectory, homogeneous: bool = False) -> Adjoint:
    """Discrete adjoint recursion and the cost gradient per node.

    The gradient is taken in the inner product ``E sum_k dt <a_k, b_k>``.
    """
    tree = data.tree
    N = tree.N
    t = data.terminal
    x, px = tr.X[N], tr.PX[N]
    yN = _mv(t["G"], x) + _mv(t["G_bar"], px)
    if not homogeneous:
        yN = yN + t["g_node"] + t["g_bar_node"]
    Y = [None] * (N + 1)
    Ybar, Z, grad = [None] * N, [None] * N, [None] * N
    Y[N] = yN
    for k in range(N - 1, -1, -1):
        c, nd = data.levels[k], data.node[k]
        yb, z = tree.expect_children(k, Y[k + 1])
        pyb, pz = tree.project(k, yb), tree.project(k, z)
        x, px, u, pu = tr.X[k], tr.PX[k], tr.u[k], tr.Pu[k]
        hx = (_mtv(c["A"], yb) + _mtv(c["A_bar"], pyb) + _mtv(c["C"], z) + _mtv(c["C_bar"], pz)
              + _mv(c["Q"], x) + _mv(c["Q_bar"], px) + _mtv(c["S"], u) + _mtv(c["S_bar"], pu))
        g = (_mtv(c["B"], yb) + _mtv(c["B_bar"], pyb) + _mtv(c["D"], z) + _mtv(c["D_bar"], pz)
             + _mv(c["S"], x) + _mv(c["S_bar"], px) + _mv(c["R"], u) + _mv(c["R_bar"], pu))
        if not homogeneous:
            hx = hx + nd["q"] + nd["q_bar"]
            g = g + nd["r"] + nd["r_bar"]
        Y[k] = yb + tree.dt * hx
        Ybar[k], Z[k], grad[k] = yb, z, g
    return Adjoint(Y, Ybar, Z, grad)


def zero_control(tree: TreeModel, m: int) -> list:
    return [np.zeros((tree.size(k), m)) for k in range(tree.N)]


def cost_exact(tree: TreeModel, spec: ProblemSpec, u, x0, e0: int | None = None,
               overrides: Mapping | None = None, form: str = "original") -> float:
    """Exact expected cost of the control ``u`` (list of level arrays).

    ``form="decomposed"`` evaluates the same quantity through the split
    state, control and weights.
    """
    _check_e0(tree, e0)
    data = prepare(tree, spec, x0, overrides)
    tr = forward(data, u)
    if form == "original":
        return trajectory_cost(data, tr)["total"]
    if form == "decomposed":
        return decomposed_cost(data, tr)
    raise ValueError(f"unknown form {form!r}")


def gradient_exact(tree: TreeModel, spec: ProblemSpec, u, x0, e0: int | None = None,
                   overrides: Mapping | None = None) -> list:
    _check_e0(tree, e0)
    data = prepare(tree, spec, x0, overrides)
    return adjoint(data, forward(data, u)).grad


def _check_e0(tree: TreeModel, e0):
    if e0 is not None and e0 != tree.e0:
        raise ValueError(f"tree was built from regime {tree.e0}, not {e0}")


# ------------------------------------------------------------ open-loop solve

@dataclass(frozen=True)
class OpenLoopResult:
    u: list
    J: float
    grad_norm: float
    grad0_norm: float
    cg_iterations: int
    restarts: int
    data: TreeData = field(repr=False)


class _Flat:
    """Flatten control levels into one vector with probability weights."""

    def __init__(self, tree: TreeModel, m: int):
        self.tree, self.m = tree, m
        self.sizes = [tree.size(k) * m for k in range(tree.N)]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)
        w = [np.repeat(tree.prob[k], m) * tree.dt for k in range(tree.N)]
        self.weights = np.concatenate(w) if w else np.zeros(0)
        self.mask = self.weights > 0

    def pack(self, levels) -> np.ndarray:
        if not levels:
            return np.zeros(0)
        return np.concatenate([np.asarray(a, float).ravel() for a in levels])

    def unpack(self, v: np.ndarray) -> list:
        return [v[self.offsets[k]:self.offsets[k + 1]].reshape(-1, self.m) for k in range(self.tree.N)]

    def inner(self, a, b) -> float:
        return float(np.dot(self.weights * a, b))

    def sup(self, v) -> float:
        return float(np.abs(v[self.mask]).max()) if self.mask.any() else 0.0


def _cg(apply, b, flat: _Flat, rtol: float, maxiter: int):
    x = np.zeros_like(b)
    r = b.copy()
    r[~flat.mask] = 0.0
    p = r.copy()
    rr = flat.inner(r, r)
    r0 = rr
    rmax = 0.0
    it = 0
    while it < maxiter and rr > (rtol ** 2) * r0 and rr > 0:
        Ap = apply(p)
        Ap[~flat.mask] = 0.0
        pAp = flat.inner(p, Ap)
        pp = flat.inner(p, p)
        if pAp <= 0 or pAp <= 1e-13 * pp * rmax:
            raise NonConvex("non-positive curvature direction in the discrete Hessian",
                            pAp / pp if pp > 0 else 0.0)
        rmax = max(rmax, pAp / pp)
        alpha = rr / pAp
        x += alpha * p
        r -= alpha * Ap
        rr_new = flat.inner(r, r)
        p = r + (rr_new / rr) * p
        rr = rr_new
        it += 1
    return x, it


def solve_open_loop(tree: TreeModel, spec: ProblemSpec, x0, e0: int | None = None,
                    overrides: Mapping | None = None, tol: float = CG_TOL,
                    max_restarts: int = 40) -> OpenLoopResult:
    """Minimize the exact discrete cost by matrix-free conjugate gradients.

    The Hessian is applied through the homogeneous forward/adjoint sweeps.
    CG runs in the probability-weighted inner product and is restarted from
    the freshly computed gradient until the node-wise condition
    ``max |grad| <= tol * (1 + max |grad(0)|)`` holds on all nodes of positive
    probability.
    """
    _check_e0(tree, e0)
    data = prepare(tree, spec, x0, overrides)
    flat = _Flat(tree, data.m)

    def grad(levels, homogeneous=False):
        tr = forward(data, levels, homogeneous=homogeneous)
        return flat.pack(adjoint(data, tr, homogeneous=homogeneous).grad)

    def hess(v):
        return grad(flat.unpack(v), homogeneous=True)

    u = np.zeros(sum(flat.sizes))
    g = grad(flat.unpack(u))
    g0 = flat.sup(g)
    target = tol * (1.0 + g0)
    iters = restarts = 0
    dim = max(1, int(flat.mask.sum()))
    while flat.sup(g) > target:
        if restarts >= max_restarts:
            break
        du, it = _cg(hess, -g, flat, rtol=1e-14, maxiter=dim)
        u = u + du
        g = grad(flat.unpack(u))
        iters += it
        restarts += 1
    levels = flat.unpack(u)
    J = trajectory_cost(data, forward(data, levels))["total"]
    return OpenLoopResult(levels, J, flat.sup(g), g0, iters, restarts, data)


# ------------------------------------------------------------ feedback on tree

def feedback_rule(data: TreeData, gains: Callable[[float], tuple]) -> ControlRule:
    """Control rule ``u = Theta_1 (X - PX) + Theta_2 PX + v_2`` on the tree.

    ``gains(t)`` returns ``(Theta, v2)`` with shapes ``(2, L, m, n)`` and ``(L, m)``.
    """
    tree = data.tree
    cache = {}

    def rule(k, x, px):
        if k not in cache:
            th, v = gains(tree.s + k * tree.dt)
            if k == 0:
                th, v = th[:, tree.e0:tree.e0 + 1], v[tree.e0:tree.e0 + 1]
            cache[k] = (np.asarray(th), np.asarray(v))
        th, v = cache[k]
        return _mv(th[0], x - px) + _mv(th[1], px) + _per_node(tree, k, v)

    return rule


def solution_gains(ric, eta=None) -> Callable[[float], tuple]:
    L, m = ric.Theta.shape[2], ric.Theta.shape[3]

    def gains(t):
        th = ric.gains_at(t)
        v = eta.v2_at(t) if eta is not None else np.zeros((L, m))
        return th, v

    return gains


def feedback_cost(tree: TreeModel, spec: ProblemSpec, gains, x0,
                  overrides: Mapping | None = None) -> dict:
    """Exact tree cost of a feedback strategy; also returns the trajectory."""
    data = prepare(tree, spec, x0, overrides)
    tr = forward(data, feedback_rule(data, gains))
    out = trajectory_cost(data, tr)
    out["trajectory"] = tr
    out["data"] = data
    return out


# ------------------------------------------------------------ decoupling check

@dataclass(frozen=True)
class DecouplingReport:
    N: int
    J_star: float
    grad_norm: float
    decoupling_error: float
    decoupling_error_1: float
    decoupling_error_2: float
    stationarity_residual: float
    stationarity_scale: float


def verify_decoupling(tree: TreeModel, spec: ProblemSpec, ric, eta, x0,
                      opt: OpenLoopResult | None = None) -> DecouplingReport:
    """Compare the oracle adjoint with the linear ansatz built from ``P`` and ``eta``.

    Returns the largest node deviation of ``Y_1 - P_1 X_1`` and
    ``Y_2 - P_2 X_2 - eta_2`` and of the stationarity expression
    ``S_i X_i + R_i u_i + r_i`` written with the continuous-time maps.
    """
    from .eta import offsets, _coef
    from .riccati import qrs, _coef_tuple

    if opt is None:
        opt = solve_open_loop(tree, spec, x0)
    data = opt.data
    tr = forward(data, opt.u)
    adj = adjoint(data, tr)
    err1 = err2 = stat = scale = 0.0
    sp_ = ric.split
    for k in range(tree.N + 1):
        t = min(tree.s + k * tree.dt, tree.T)
        P = ric.P_at(t)
        eta2 = eta.eta_at(t) if eta is not None else np.zeros((tree.L, data.n))
        if k == 0:
            P, eta2 = P[:, tree.e0:tree.e0 + 1], eta2[tree.e0:tree.e0 + 1]
        mask = tree.positive(k)
        y = adj.Y[k]
        py = tree.project(k, y)
        x2, x1 = tr.PX[k], tr.X[k] - tr.PX[k]
        d1 = (y - py) - _mv(P[0], x1)
        d2 = py - _mv(P[1], x2) - _per_node(tree, k, eta2)
        err1 = max(err1, float(np.abs(d1[mask]).max()))
        err2 = max(err2, float(np.abs(d2[mask]).max()))
        scale = max(scale, float(np.abs(y[mask]).max()))
        if k < tree.N:
            c = _coef_tuple(sp_, t)
            _, Rc, Sc = qrs(c, ric.P_at(t))
            _, rvec, _ = offsets(_coef(sp_, t), ric.P_at(t),
                                 eta.eta_at(t) if eta is not None else np.zeros((tree.L, data.n)))
            if k == 0:
                Rc, Sc, rvec = Rc[:, tree.e0:tree.e0 + 1], Sc[:, tree.e0:tree.e0 + 1], rvec[tree.e0:tree.e0 + 1]
            u2, u1 = tr.Pu[k], tr.u[k] - tr.Pu[k]
            s1 = _mv(Sc[0], x1) + _mv(Rc[0], u1)
            s2 = _mv(Sc[1], x2) + _mv(Rc[1], u2) + _per_node(tree, k, rvec)
            stat = max(stat, float(np.abs(s1[mask]).max()), float(np.abs(s2[mask]).max()))
    return DecouplingReport(tree.N, opt.J, opt.grad_norm, max(err1, err2), err1, err2, stat, scale)
