"""Random and closed-form test problems.

Random problems are drawn in split form (one matrix per family and index
``i = 1, 2``) so definiteness conditions such as ``R_i >= I`` or
``Q_i - S_i' R_i^-1 S_i >= 0`` can be imposed directly, then converted back to
the ``(M, M_bar)`` parameterization with ``M_bar = M_2 - M_1``.
"""

from __future__ import annotations

import numpy as np

from .problem import ChainGenerator, ProblemSpec


def tanh_problem(horizon=(0.0, 1.0)) -> ProblemSpec:
    """Scalar single-regime problem with ``P(t) = tanh(T - t)``."""
    return ProblemSpec.build([[0.0]], 1, 1, horizon=horizon, B=1.0, Q=1.0, R=1.0,
                             name="scalar-tanh")


def random_chain(rng: np.random.Generator, L: int, max_rate: float = 1.0) -> ChainGenerator:
    off = rng.uniform(0.2, 1.0, size=(L, L)) * max_rate / max(1, L - 1)
    return ChainGenerator.from_offdiagonal(off)


def _psd(rng, L, k, scale, floor):
    M = rng.normal(size=(L, k, k)) * scale
    return M @ M.transpose(0, 2, 1) + floor * np.eye(k)


def random_problem(rng: np.random.Generator, L: int = 2, n: int = 2, m: int = 2, *,
                   horizon=(0.0, 1.0), max_rate: float = 1.0, r_floor: float = 1.0,
                   drift: float = 0.4, noise: float = 0.25, cross: float = 0.2,
                   nonhomogeneous: float = 0.3, mean_field: bool = True,
                   control_noise: bool = True, name: str = "random") -> ProblemSpec:
    """Constant-coefficient problem with ``R_i >= r_floor I``, ``G_i >= 0`` and
    ``Q_i - S_i' R_i^-1 S_i >= 0`` for both split indices."""
    pairs = {}
    for i in range(2):
        R = _psd(rng, L, m, 0.3, r_floor)
        S = rng.normal(size=(L, m, n)) * cross
        Q = _psd(rng, L, n, 0.4, 0.1) + S.transpose(0, 2, 1) @ np.linalg.solve(R, S)
        G = _psd(rng, L, n, 0.4, 0.0)
        pairs[i] = {
            "A": rng.normal(size=(L, n, n)) * drift,
            "B": rng.normal(size=(L, n, m)) * 0.5 + (0.5 * np.eye(n, m) if i == 0 else 0.0),
            "C": rng.normal(size=(L, n, n)) * noise,
            "D": rng.normal(size=(L, n, m)) * noise * control_noise,
            "Q": Q, "S": S, "R": R, "G": G,
        }
        if not mean_field:
            break
    if not mean_field:
        pairs[1] = pairs[0]
    data = {}
    for key in pairs[0]:
        data[key] = pairs[0][key]
        data[key + "_bar"] = pairs[1][key] - pairs[0][key]
    if nonhomogeneous:
        for key, d in (("b", n), ("sigma", n), ("q", n), ("q_bar", n), ("r", m),
                       ("r_bar", m), ("g", n), ("g_bar", n)):
            data[key] = rng.normal(size=(L, d)) * nonhomogeneous
    return ProblemSpec.build(random_chain(rng, L, max_rate), n, m, horizon=horizon,
                             name=name, **data)


def random_scalar_problem(rng: np.random.Generator, L: int = 2, **kw) -> ProblemSpec:
    """Two-regime scalar problem sized for the tree oracle (rates <= 1.5)."""
    kw.setdefault("max_rate", 1.5)
    return random_problem(rng, L, 1, 1, **kw)


def null_space_problem(L: int = 2) -> ProblemSpec:
    """``n = 1, m = 2`` problem whose second control has no effect and no cost.

    ``R = diag(1, 0)`` and ``D = 0`` make the control weight singular, while
    ``B = [1, 0]`` and a zero second row of ``S`` keep the range condition.
    """
    rates = np.array([[-0.6, 0.6], [0.9, -0.9]])[:L, :L] if L == 2 else np.zeros((1, 1))
    B = np.array([[[1.0, 0.0]], [[0.8, 0.0]]])[:L]
    S = np.array([[[0.3], [0.0]], [[-0.2], [0.0]]])[:L]
    R = np.array([np.diag([1.0, 0.0]), np.diag([1.5, 0.0])])[:L]
    return ProblemSpec.build(
        rates, 1, 2, name="null-space",
        A=np.array([0.2, -0.3])[:L, None, None], A_bar=0.1, B=B,
        C=np.array([0.3, 0.2])[:L, None, None], C_bar=0.1,
        Q=np.array([1.0, 0.7])[:L, None, None], Q_bar=0.2, S=S, R=R,
        G=np.array([0.5, 0.2])[:L, None, None],
        b=np.array([0.2, -0.1])[:L, None], sigma=np.array([0.1, 0.3])[:L, None],
        q=np.array([0.1, 0.2])[:L, None], r=np.array([[0.2, 0.0], [-0.1, 0.0]])[:L],
        g=np.array([0.1, -0.2])[:L, None])


def mild_scalar_problem(rng: np.random.Generator, L: int = 2, name: str = "mild-scalar") -> ProblemSpec:
    """Scalar problem with uniformly drawn moderate coefficients.

    Sized so the first-order tree scheme is in its asymptotic range already at
    a handful of steps on ``[0, 1]``.
    """
    def u(lo, hi, *shape):
        return rng.uniform(lo, hi, size=(L,) + shape)

    off = rng.uniform(0.4, 1.2, size=(L, L))
    return ProblemSpec.build(
        ChainGenerator.from_offdiagonal(off), 1, 1, name=name,
        A=u(-.5, .5, 1, 1), A_bar=u(-.3, .3, 1, 1), B=u(.5, 1.5, 1, 1), B_bar=u(-.3, .3, 1, 1),
        C=u(-.4, .4, 1, 1), C_bar=u(-.2, .2, 1, 1), D=u(-.4, .4, 1, 1), D_bar=u(-.2, .2, 1, 1),
        Q=u(.5, 1.5, 1, 1), Q_bar=u(0, .5, 1, 1), R=u(1, 2, 1, 1), R_bar=u(0, .5, 1, 1),
        G=u(0, 1, 1, 1), G_bar=u(0, .5, 1, 1), b=u(-.3, .3, 1), sigma=u(-.3, .3, 1),
        q=u(-.3, .3, 1), q_bar=u(-.3, .3, 1), r=u(-.3, .3, 1), r_bar=u(-.3, .3, 1),
        g=u(-.3, .3, 1), g_bar=u(-.3, .3, 1))
