"""Regime-coupled Riccati equations for the split problem.

For each regime ``e`` and ``i in {1, 2}`` the matrix ``P_i(t, e)`` solves the
terminal-value problem

    dP_i/dt = -[Q_i - S_i' R_i^+ S_i] - sum_e' rates[e, e'] (P_i(t, e') - P_i(t, e)),
    P_i(T, e) = G_i(e),

where

    Q_i = P_i A_i + A_i' P_i + C_i' P_1 C_i + Q_i,
    R_i = R_i + D_i' P_1 D_i,
    S_i = B_i' P_i + D_i' P_1 C_i + S_i

(calligraphic maps on the left). Note that both families use ``P_1`` in the
noise terms, since only the chain-orthogonal part of the state carries
Brownian noise.

Arrays of solutions use the layout ``(time, i, regime, row, col)`` with
``i = 0`` for the first family and ``i = 1`` for the second.
"""

from __future__ import annotations

import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import BlowUpError, MaxIterations, NotStronglyRegular, RegularityError
from .problem import SplitCoefficients

PINV_CUTOFF = 1e-10
RANGE_TOL = 1e-8
RANGE_FLOOR = 1e-14
BLOWUP_BOUND = 1e8
DEFAULT_GRID = 2000

_FAMILIES = ("A", "B", "C", "D", "Q", "S", "R")
_ONE = np.ones((1, 1))


def _t(a: np.ndarray) -> np.ndarray:
    return a.swapaxes(-1, -2)


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + _t(a))


def _coupling(rates: np.ndarray, P: np.ndarray) -> np.ndarray:
    """sum_e' rates[e, e'] P(e') over the regime axis (third from the end)."""
    return np.einsum("ef,...fab->...eab", rates, P)


@dataclass(frozen=True)
class PsdPinv:
    """Eigen-based pseudo-inverse of a batch of symmetric matrices."""

    pinv: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray
    keep: np.ndarray
    cutoff: np.ndarray

    def range_defect(self, S: np.ndarray):
        """Norms of ``(I - R R^+) S`` and of ``S`` per matrix (or vector)."""
        Sm = S[..., None] if S.ndim == self.keep.ndim else S
        den = np.sqrt((Sm ** 2).sum(axis=(-1, -2)))
        null = ~self.keep
        if not null.any():
            return np.zeros(den.shape), den
        comp = _t(self.eigvecs) @ Sm
        num = np.sqrt(((comp * null[..., None]) ** 2).sum(axis=(-1, -2)))
        return num, den

    def range_violated(self, S: np.ndarray) -> np.ndarray:
        num, den = self.range_defect(S)
        return num > RANGE_TOL * den + RANGE_FLOOR


@contextmanager
def pinv_cutoff(value: float):
    """Temporarily change the default relative cutoff of :func:`pinv_psd`."""
    global PINV_CUTOFF
    if not value > 0:
        raise ValueError("cutoff must be positive")
    old, PINV_CUTOFF = PINV_CUTOFF, float(value)
    try:
        yield
    finally:
        PINV_CUTOFF = old


def pinv_psd(R: np.ndarray, cutoff: float | None = None) -> PsdPinv:
    """Moore-Penrose inverse with eigenvalues below ``cutoff * sigma_max`` dropped.

    ``cutoff`` defaults to the module value :data:`PINV_CUTOFF`.
    """
    if cutoff is None:
        cutoff = PINV_CUTOFF
    if R.shape[-1] == 1:
        w = R[..., 0]
        keep = w > cutoff * np.abs(w)
        inv = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
        return PsdPinv(inv[..., None], w, _ONE, keep, cutoff * np.abs(w[..., 0]))
    w, V = np.linalg.eigh(R)
    smax = np.abs(w).max(axis=-1, keepdims=True)
    cut = cutoff * smax
    keep = w > cut
    inv = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
    Rdag = (V * inv[..., None, :]) @ _t(V)
    return PsdPinv(Rdag, w, V, keep, cut[..., 0])


def qrs(c, P: np.ndarray):
    """The three maps for coefficient tuple ``c`` (A, B, C, D, Q, S, R) and ``P``.

    ``P`` has shape ``(..., 2, L, n, n)``; the leading shape must broadcast
    against the coefficients.
    """
    A, B, C, D, Q, S, R = c[:7]
    At, Bt, Ct, Dt = c[7:] if len(c) == 11 else (_t(A), _t(B), _t(C), _t(D))
    P1 = P[..., :1, :, :, :]
    CtP1 = Ct @ P1
    DtP1 = Dt @ P1
    Qc = P @ A + At @ P + CtP1 @ C + Q
    Rc = R + DtP1 @ D
    Sc = Bt @ P + DtP1 @ C + S
    return Qc, Rc, Sc


def _first_bad(mask: np.ndarray, times):
    idx = tuple(int(v) for v in np.argwhere(mask)[0])
    i, e = idx[-2], idx[-1]
    if np.ndim(times) == 0:
        t = float(times)
    else:
        t = float(np.asarray(times)[idx[0]])
    return i, t, e


def check_regular(rp: PsdPinv, Sc: np.ndarray, times) -> None:
    """Raise :class:`RegularityError` unless R >= 0 and range(S) lies in range(R)."""
    neg = rp.eigvals.min(axis=-1) < -rp.cutoff
    if neg.any():
        i, t, e = _first_bad(neg, times)
        raise RegularityError("control weight map is not positive semidefinite", i, t, e)
    if not rp.keep.all():
        bad = rp.range_violated(Sc)
        if bad.any():
            i, t, e = _first_bad(bad, times)
            raise RegularityError("range condition violated: S not in range of R", i, t, e)


def riccati_drift(c, P: np.ndarray, rates: np.ndarray, times=None, check: bool = True,
                  symmetrize: bool = True) -> np.ndarray:
    """Time derivative of ``P`` for a batch of coefficient slices."""
    Qc, Rc, Sc = qrs(c, P)
    rp = pinv_psd(_sym(Rc))
    if check:
        check_regular(rp, Sc, times if times is not None else np.nan)
    F = _t(Sc) @ rp.pinv @ Sc - Qc - _coupling(rates, P)
    return _sym(F) if symmetrize else F


def _coef_tuple(sp: SplitCoefficients, t, transposes: bool = False) -> tuple:
    c = sp.sample(t)
    out = tuple(c[k] for k in _FAMILIES)
    if transposes:
        out += tuple(np.ascontiguousarray(_t(c[k])) for k in "ABCD")
    return out


def riccati_rhs(t: float, e: int, P1_all: np.ndarray, P2_all: np.ndarray, sp: SplitCoefficients):
    """``(dP_1/dt, dP_2/dt)`` at ``(t, e)`` given both families in every regime."""
    P = np.stack([np.asarray(P1_all, float), np.asarray(P2_all, float)])
    F = riccati_drift(_coef_tuple(sp, t), P, sp.rates, times=t)
    return F[0, e], F[1, e]


@dataclass(frozen=True)
class QRSMaps:
    """Callable form of :func:`qrs` bound to a split problem."""

    split: SplitCoefficients

    def __call__(self, t: float, P: np.ndarray):
        return qrs(_coef_tuple(self.split, t), P)

    def at(self, t: float, e: int, i: int, P1: np.ndarray, Pi: np.ndarray):
        """Maps for family ``i`` (0 or 1) in regime ``e``."""
        coef = self.split.sample(t)
        A, B, C, D, Q, S, R = (coef[k][i, e] for k in _FAMILIES)
        return (Pi @ A + A.T @ Pi + C.T @ P1 @ C + Q,
                R + D.T @ P1 @ D,
                B.T @ Pi + D.T @ P1 @ C + S)


def grid_times(sp: SplitCoefficients, grid) -> np.ndarray:
    if np.ndim(grid) == 0:
        N = int(grid)
        if N < 1:
            raise ValueError("grid needs at least one interval")
        return np.linspace(sp.s, sp.T, N + 1)
    times = np.asarray(grid, dtype=float)
    if times[0] != sp.s or times[-1] != sp.T or np.any(np.diff(times) <= 0):
        raise ValueError("time grid must increase from s to T")
    return times


def half_grid(times: np.ndarray) -> np.ndarray:
    """Nodes interleaved with interval midpoints (length 2N + 1)."""
    th = np.empty(2 * len(times) - 1)
    th[0::2] = times
    th[1::2] = 0.5 * (times[:-1] + times[1:])
    return th


def hermite(times: np.ndarray, Y: np.ndarray, F: np.ndarray, t) -> np.ndarray:
    """Cubic Hermite interpolant through node values ``Y`` and slopes ``F``."""
    t = np.asarray(t, dtype=float)
    k = np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2)
    h = times[k + 1] - times[k]
    th = (t - times[k]) / h
    shape = th.shape + (1,) * (Y.ndim - 1)
    th = th.reshape(shape)
    hh = h.reshape(shape)
    h00 = (1 + 2 * th) * (1 - th) ** 2
    h10 = th * (1 - th) ** 2
    h01 = th ** 2 * (3 - 2 * th)
    h11 = th ** 2 * (th - 1)
    return h00 * Y[k] + h10 * hh * F[k] + h01 * Y[k + 1] + h11 * hh * F[k + 1]


def hermite_midpoint_defect(times, Y, F, drift_mid) -> float:
    """Max defect of the Hermite interpolant at interval midpoints.

    ``drift_mid(H)`` returns the equation's right-hand side at the midpoints
    for the interpolated values ``H``.
    """
    h = np.diff(times).reshape((-1,) + (1,) * (Y.ndim - 1))
    H = 0.5 * (Y[:-1] + Y[1:]) + h * (F[:-1] - F[1:]) / 8.0
    dH = 1.5 * (Y[1:] - Y[:-1]) / h - 0.25 * (F[:-1] + F[1:])
    return float(np.abs(dH - drift_mid(H)).max())


@dataclass(frozen=True)
class RiccatiSolution:
    """Node values of ``P_1, P_2`` and derived gains.

    ``P`` and ``dP`` have shape ``(N+1, 2, L, n, n)``; ``Theta`` has shape
    ``(N+1, 2, L, m, n)``. Between nodes ``P`` is evaluated by cubic Hermite
    interpolation, which keeps fourth-order accuracy.
    """

    times: np.ndarray
    P: np.ndarray
    dP: np.ndarray
    Theta: np.ndarray
    delta_min: float
    psd_ok: bool
    range_ok: bool
    residual_norm: float
    split: SplitCoefficients = field(repr=False)

    @property
    def P1(self) -> np.ndarray:
        return self.P[:, 0]

    @property
    def P2(self) -> np.ndarray:
        return self.P[:, 1]

    @property
    def Theta1(self) -> np.ndarray:
        return self.Theta[:, 0]

    @property
    def Theta2(self) -> np.ndarray:
        return self.Theta[:, 1]

    def P_at(self, t) -> np.ndarray:
        return hermite(self.times, self.P, self.dP, t)

    def maps_at(self, t):
        return qrs(_coef_tuple(self.split, t), self.P_at(t))

    def gains_at(self, t) -> np.ndarray:
        """Gains ``-R^+ S`` at arbitrary times, shape ``t.shape + (2, L, m, n)``."""
        _, Rc, Sc = self.maps_at(t)
        return -pinv_psd(_sym(Rc)).pinv @ Sc


def _assemble(sp: SplitCoefficients, times: np.ndarray, P: np.ndarray, c_half) -> RiccatiSolution:
    c_half = c_half[:7]
    c_nodes = tuple(a[0::2] for a in c_half)
    c_mid = tuple(a[1::2] for a in c_half)
    _, Rc, Sc = qrs(c_nodes, P)
    rp = pinv_psd(_sym(Rc))
    psd_ok = bool(np.all(rp.eigvals.min(axis=-1) >= -rp.cutoff))
    range_ok = not bool(np.any(rp.range_violated(Sc)))
    Theta = -rp.pinv @ Sc
    F = riccati_drift(c_nodes, P, sp.rates, check=False)
    mids = 0.5 * (times[:-1] + times[1:])
    resid = hermite_midpoint_defect(
        times, P, F, lambda H: riccati_drift(c_mid, H, sp.rates, times=mids, check=False))
    for a in (P, F, Theta):
        a.setflags(write=False)
    return RiccatiSolution(times, P, F, Theta, float(rp.eigvals.min()), psd_ok, range_ok,
                           resid, sp)


def _rk4_backward(times, P_T, f, bound, symmetric: bool = True):
    """Classical RK4 from ``times[-1]`` down to ``times[0]``.

    ``f(j, P, first)`` evaluates the drift at half-grid index ``j``; ``first``
    marks the stage at the step's starting node.
    """
    N = len(times) - 1
    P = np.empty((N + 1,) + P_T.shape)
    P[N] = cur = P_T
    for k in range(N, 0, -1):
        h = times[k] - times[k - 1]
        k1 = f(2 * k, cur, True)
        k2 = f(2 * k - 1, cur - 0.5 * h * k1, False)
        k3 = f(2 * k - 1, cur - 0.5 * h * k2, False)
        k4 = f(2 * k - 2, cur - h * k3, False)
        cur = cur - (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if symmetric:
            cur = _sym(cur)
        big = np.abs(cur).max()
        if not big <= bound:
            raise BlowUpError(f"solution norm {big:.3g} exceeds bound {bound:.3g}", times[k - 1])
        P[k - 1] = cur
    return P


def solve_bsdre(sp: SplitCoefficients, grid=DEFAULT_GRID, bound: float = BLOWUP_BOUND,
                check: bool = True) -> RiccatiSolution:
    """Integrate the Riccati system backward from ``P_i(T) = G_i`` with RK4.

    Parameters
    ----------
    grid : int or array
        Number of uniform intervals on ``[s, T]`` or an explicit time grid.
    bound : float
        Entry size treated as blow-up.
    check : bool
        Verify positivity and the range condition at the start of every step.
    """
    times = grid_times(sp, grid)
    th = half_grid(times)
    c_half = _coef_tuple(sp, th, transposes=True)
    rates = sp.rates

    def f(j, P, first):
        c = tuple(a[j] for a in c_half)
        return riccati_drift(c, P, rates, times=th[j], check=check and first, symmetrize=False)

    P = _rk4_backward(times, np.array(sp.terminal_pairs["G"]), f, bound)
    return _assemble(sp, times, P, c_half)


def check_strong_regularity(sol: RiccatiSolution, delta: float) -> bool:
    """True iff every eigenvalue of the control weight map is at least ``delta``."""
    return bool(sol.delta_min >= delta)


def feedback_gains(sol: RiccatiSolution, sp: SplitCoefficients):
    """Gains ``Theta_i = -R_i^+ S_i`` at the grid nodes.

    Returns ``(Theta1, Theta2)``, each of shape ``(N+1, L, m, n)``.
    """
    c = _coef_tuple(sp, sol.times)
    _, Rc, Sc = qrs(c, sol.P)
    rp = pinv_psd(_sym(Rc))
    check_regular(rp, Sc, sol.times)
    Theta = -rp.pinv @ Sc
    return Theta[:, 0], Theta[:, 1]


# ------------------------------------------------------------ monotone iteration

def lyapunov_drift(c, P: np.ndarray, Theta: np.ndarray, rates: np.ndarray) -> np.ndarray:
    """Right-hand side of the linear equation with frozen gains ``Theta``."""
    A, B, C, D, Q, S, R = c
    P1 = P[..., :1, :, :, :]
    AT = A + B @ Theta
    CT = C + D @ Theta
    QT = Q + _t(Theta) @ S + _t(S) @ Theta + _t(Theta) @ R @ Theta
    F = -(P @ AT + _t(AT) @ P + _t(CT) @ P1 @ CT + QT) - _coupling(rates, P)
    return _sym(F)


@dataclass(frozen=True)
class IterationStep:
    k: int
    max_diff: float
    min_eig_decrease: float
    min_eig_R: float
    min_eig_P: float
    monotone: bool


@dataclass(frozen=True)
class IterationReport:
    steps: tuple
    converged: bool
    k_star: int
    solution: RiccatiSolution | None
    monotone_ok: bool
    lower_bound: float
    hypothesis_ok: bool

    def table(self) -> list[dict]:
        return [vars(s).copy() for s in self.steps]


def hypothesis_holds(sp: SplitCoefficients, tol: float = 1e-12) -> bool:
    """R_i uniformly positive, Q_i - S_i' R_i^-1 S_i >= 0 and G_i >= 0 at all nodes."""
    R = sp.pairs["R"]
    wR = np.linalg.eigvalsh(_sym(R))
    if wR.min() <= tol:
        return False
    S, Q = sp.pairs["S"], sp.pairs["Q"]
    schur = Q - _t(S) @ np.linalg.solve(R, S)
    wG = np.linalg.eigvalsh(_sym(sp.terminal_pairs["G"]))
    return bool(np.linalg.eigvalsh(_sym(schur)).min() >= -tol and wG.min() >= -tol)


def iterate_strongly_regular(sp: SplitCoefficients, grid=DEFAULT_GRID, k_max: int = 30,
                             tol: float = 1e-10, delta_floor: float = 1e-10,
                             tol_int: float = 1e-9, bound: float = BLOWUP_BOUND) -> IterationReport:
    """Gain iteration starting from zero gains.

    Each step solves the linear coupled equation with the previous gains and
    updates the gains from the new ``P``. Stops once successive iterates differ
    by less than ``tol`` in max norm; monotone decrease is checked with slack
    ``10 * tol_int``.
    """
    hyp = hypothesis_holds(sp)
    if not hyp:
        warnings.warn("sufficient condition for the iteration does not hold; "
                      "convergence is not guaranteed", RuntimeWarning, stacklevel=2)
    times = grid_times(sp, grid)
    th = half_grid(times)
    c_half = _coef_tuple(sp, th)
    c_nodes = tuple(a[0::2] for a in c_half)
    rates = sp.rates
    L, n, m = sp.num_regimes, sp.n, sp.m
    theta_half = np.zeros((len(th), 2, L, m, n))
    P_T = np.array(sp.terminal_pairs["G"])
    prev = np.zeros((len(times), 2, L, n, n))
    steps = []
    monotone_ok = True
    min_P = np.inf
    converged = False
    k = 0
    for k in range(1, k_max + 1):
        def f(j, P, first, _th=theta_half):
            return lyapunov_drift(tuple(a[j] for a in c_half), P, _th[j], rates)

        P = _rk4_backward(times, P_T, f, bound)
        F = lyapunov_drift(c_nodes, P, theta_half[0::2], rates)
        Ph = np.empty((len(th),) + P.shape[1:])
        Ph[0::2] = P
        Ph[1::2] = hermite(times, P, F, th[1::2])
        _, Rc, Sc = qrs(c_half, Ph)
        wR = np.linalg.eigvalsh(_sym(Rc))
        min_R = float(wR.min())
        if min_R < delta_floor:
            raise NotStronglyRegular(
                f"iteration {k}: control weight eigenvalue {min_R:.3g} below floor {delta_floor:.3g}",
                k, min_R)
        theta_half = -np.linalg.solve(_sym(Rc), Sc)
        diff = float(np.abs(P - prev).max())
        if k > 1:
            dec = float(np.linalg.eigvalsh(_sym(prev - P)).min())
            mono = dec >= -10 * tol_int
        else:
            dec, mono = np.nan, True
        monotone_ok &= mono
        wP = float(np.linalg.eigvalsh(P).min())
        min_P = min(min_P, wP)
        steps.append(IterationStep(k, diff, dec, min_R, wP, bool(mono)))
        prev = P
        if diff < tol:
            converged = True
            break
    sol = _assemble(sp, times, prev, c_half)
    report = IterationReport(tuple(steps), converged, k if converged else -1, sol,
                             bool(monotone_ok), max(0.0, -min_P), hyp)
    if not converged:
        raise MaxIterations(f"no convergence within {k_max} iterations "
                            f"(last change {steps[-1].max_diff:.3g})", report)
    return report
