"""Offset equation, closed-loop offsets and the value function.

With regime-measurable nonhomogeneous data only the second offset family is
nonzero. It solves the linear backward system

    d eta_2/dt = -[A_2' eta_2 + P_2 b_2 + C_2' P_1 sigma_2 + q_2 - S_2' R_2^+ r_2]
                 - sum_e' rates[e, e'] (eta_2(e') - eta_2(e)),
    eta_2(T) = g_2,

with ``r_2 = B_2' eta_2 + D_2' P_1 sigma_2 + r_2`` (data ``r_2`` on the right).
The offset control is ``v_2 = -R_2^+ r_2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import RangeError
from .problem import SplitCoefficients
from .riccati import (BLOWUP_BOUND, RiccatiSolution, _rk4_backward, _sym, _t,
                      grid_times, half_grid, hermite, hermite_midpoint_defect, pinv_psd, qrs)

_ALL = ("A", "B", "C", "D", "Q", "S", "R", "b", "sigma", "q", "r")


def _mv(M: np.ndarray, v: np.ndarray) -> np.ndarray:
    return (M @ v[..., None])[..., 0]


def _coef(sp: SplitCoefficients, t) -> dict:
    return sp.sample(t)


def _offset_terms(c: dict, P: np.ndarray, eta: np.ndarray):
    """Maps for the second family plus the offset vector ``r_2`` and ``P_1 sigma_2``."""
    cm = tuple(c[k] for k in _ALL[:7])
    _, Rc, Sc = qrs(cm, P)
    Rc2, Sc2 = Rc[..., 1, :, :, :], Sc[..., 1, :, :, :]
    P1, P2 = P[..., 0, :, :, :], P[..., 1, :, :, :]
    B2, C2, D2 = c["B"][..., 1, :, :, :], c["C"][..., 1, :, :, :], c["D"][..., 1, :, :, :]
    P1s = _mv(P1, c["sigma"][..., 1, :, :])
    rvec = _mv(_t(B2), eta) + _mv(_t(D2), P1s) + c["r"][..., 1, :, :]
    return Rc2, Sc2, rvec, P1s, P2, C2


def _check_range(rp, rvec, times):
    if rp.keep.all():
        return
    bad = rp.range_violated(rvec)
    if bad.any():
        idx = np.argwhere(bad)[0]
        t = float(times) if np.ndim(times) == 0 else float(np.asarray(times)[idx[0]])
        raise RangeError("offset vector not in the range of the control weight map", t, int(idx[-1]))


def eta_drift(c: dict, P: np.ndarray, eta: np.ndarray, rates: np.ndarray,
              times=None, check: bool = True) -> np.ndarray:
    Rc2, Sc2, rvec, P1s, P2, C2 = _offset_terms(c, P, eta)
    rp = pinv_psd(_sym(Rc2))
    if check:
        _check_range(rp, rvec, times if times is not None else np.nan)
    A2 = c["A"][..., 1, :, :, :]
    drive = (_mv(_t(A2), eta) + _mv(P2, c["b"][..., 1, :, :]) + _mv(_t(C2), P1s)
             + c["q"][..., 1, :, :] - _mv(_t(Sc2), _mv(rp.pinv, rvec)))
    return -drive - np.einsum("ef,...fa->...ea", rates, eta)


def offsets(c: dict, P: np.ndarray, eta: np.ndarray):
    """``v_2 = -R_2^+ r_2`` and the offset vector itself."""
    Rc2, _, rvec, _, _, _ = _offset_terms(c, P, eta)
    rp = pinv_psd(_sym(Rc2))
    return -_mv(rp.pinv, rvec), rvec, rp


@dataclass(frozen=True)
class EtaSolution:
    """Second offset family ``eta2`` (``(N+1, L, n)``) and offsets ``v2`` (``(N+1, L, m)``).

    The first family and its offset vanish identically for regime-measurable
    data, recorded by ``eta1_zero`` and ``v1_zero``.
    """

    times: np.ndarray
    eta2: np.ndarray
    deta2: np.ndarray
    v2: np.ndarray
    residual_norm: float
    ric: RiccatiSolution = field(repr=False)
    split: SplitCoefficients = field(repr=False)
    eta1_zero: bool = True
    v1_zero: bool = True

    def eta_at(self, t) -> np.ndarray:
        return hermite(self.times, self.eta2, self.deta2, t)

    def v2_at(self, t) -> np.ndarray:
        v, _, _ = offsets(_coef(self.split, t), self.ric.P_at(t), self.eta_at(t))
        return v


def solve_eta(sp: SplitCoefficients, ric: RiccatiSolution, grid=None,
              bound: float = BLOWUP_BOUND) -> EtaSolution:
    """Backward RK4 for the offset system on ``grid`` (default: the Riccati grid).

    ``P`` between Riccati nodes comes from its Hermite interpolant, so the
    combined scheme keeps fourth order.
    """
    times = ric.times if grid is None else grid_times(sp, grid)
    th = half_grid(times)
    c_half = _coef(sp, th)
    P_half = ric.P_at(th)
    rates = sp.rates

    def f(j, eta, first):
        c = {k: v[j] for k, v in c_half.items()}
        return eta_drift(c, P_half[j], eta, rates, times=th[j], check=first)

    g2 = np.array(sp.terminal_pairs["g"][1])
    eta = _rk4_backward(times, g2, f, bound, symmetric=False)
    c_nodes = {k: v[0::2] for k, v in c_half.items()}
    c_mid = {k: v[1::2] for k, v in c_half.items()}
    F = eta_drift(c_nodes, P_half[0::2], eta, rates, check=False)
    v2, rvec, rp = offsets(c_nodes, P_half[0::2], eta)
    _check_range(rp, rvec, times)
    mids = th[1::2]
    resid = hermite_midpoint_defect(
        times, eta, F, lambda H: eta_drift(c_mid, P_half[1::2], H, rates, times=mids, check=False))
    for a in (eta, F, v2):
        a.setflags(write=False)
    return EtaSolution(times, eta, F, v2, resid, ric, sp)


def offset_integrand(c: dict, P: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """``2<eta_2, b_2> + <P_1 sigma_2, sigma_2> - <R_2^+ r_2, r_2>`` per regime."""
    v, rvec, _ = offsets(c, P, eta)
    P1s = _mv(P[..., 0, :, :, :], c["sigma"][..., 1, :, :])
    return (2 * (eta * c["b"][..., 1, :, :]).sum(-1)
            + (P1s * c["sigma"][..., 1, :, :]).sum(-1)
            + (v * rvec).sum(-1))


def regime_weights(rates: np.ndarray, e0: int, times: np.ndarray) -> np.ndarray:
    """Forward Kolmogorov probabilities ``P(alpha(t) = e)`` by RK4 on ``times``."""
    L = rates.shape[0]
    w = np.zeros((len(times), L))
    w[0, e0] = 1.0
    for k in range(len(times) - 1):
        h = times[k + 1] - times[k]
        y = w[k]
        k1 = y @ rates
        k2 = (y + 0.5 * h * k1) @ rates
        k3 = (y + 0.5 * h * k2) @ rates
        k4 = (y + h * k3) @ rates
        w[k + 1] = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return w


def value_function(s: float, x0, e0: int, ric: RiccatiSolution, eta: EtaSolution,
                   sp: SplitCoefficients) -> float:
    """Optimal cost from the deterministic initial pair ``(x0, e0)`` at time ``s``.

    ``s`` must be a node of the offset grid. The time integral is an exact
    expectation over the chain: regime probabilities come from RK4 on the
    forward Kolmogorov equation and the integral uses Simpson's rule on each
    grid interval.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    times = eta.times
    hits = np.flatnonzero(np.isclose(times, s, rtol=0, atol=1e-12 * max(1.0, abs(s))))
    if len(hits) == 0:
        raise ValueError(f"s={s} is not a grid node")
    k0 = int(hits[0])
    tt = times[k0:]
    th = half_grid(tt)
    c = _coef(sp, th)
    integrand = offset_integrand(c, ric.P_at(th), eta.eta_at(th))
    w = regime_weights(sp.rates, e0, th)
    g = (w * integrand).sum(-1)
    h = np.diff(tt)
    integral = float(np.sum(h / 6 * (g[0:-1:2] + 4 * g[1::2] + g[2::2]))) if len(tt) > 1 else 0.0
    P2 = ric.P_at(times[k0])[1, e0]
    eta2 = eta.eta2[k0, e0]
    return 0.5 * (float(x0 @ P2 @ x0) + 2 * float(eta2 @ x0) + integral)
