"""Problem data for mean-field LQ control with regime switching.

A problem holds a continuous-time Markov chain generator and, for every
regime, coefficient samples on a uniform time grid. Values between grid
nodes are obtained by linear interpolation.

Coefficient names
-----------------
Dynamics:  ``A, A_bar, C, C_bar`` (n x n), ``B, B_bar, D, D_bar`` (n x m),
``b, sigma`` (n).
Running cost: ``Q, Q_bar`` (n x n), ``S, S_bar`` (m x n), ``R, R_bar``
(m x m), ``q, q_bar`` (n), ``r, r_bar`` (m).
Terminal cost (per regime only): ``G, G_bar`` (n x n), ``g, g_bar`` (n).

All nonhomogeneous terms are functions of ``(t, regime)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import DimensionError, ProblemFormatError

MATRIX_FIELDS = {
    "A": ("n", "n"), "A_bar": ("n", "n"),
    "B": ("n", "m"), "B_bar": ("n", "m"),
    "C": ("n", "n"), "C_bar": ("n", "n"),
    "D": ("n", "m"), "D_bar": ("n", "m"),
    "Q": ("n", "n"), "Q_bar": ("n", "n"),
    "S": ("m", "n"), "S_bar": ("m", "n"),
    "R": ("m", "m"), "R_bar": ("m", "m"),
}
VECTOR_FIELDS = {
    "b": ("n",), "sigma": ("n",),
    "q": ("n",), "q_bar": ("n",),
    "r": ("m",), "r_bar": ("m",),
}
TERMINAL_FIELDS = {
    "G": ("n", "n"), "G_bar": ("n", "n"),
    "g": ("n",), "g_bar": ("n",),
}
COEFFICIENT_FIELDS = {**MATRIX_FIELDS, **VECTOR_FIELDS}
SYMMETRIC_FIELDS = ("Q", "Q_bar", "R", "R_bar", "G", "G_bar")

# (name of the split family, plain field, mean-field field or None)
DYNAMIC_PAIRS = [("A", "A", "A_bar"), ("B", "B", "B_bar"),
                 ("C", "C", "C_bar"), ("D", "D", "D_bar")]
WEIGHT_PAIRS = [("Q", "Q", "Q_bar"), ("S", "S", "S_bar"), ("R", "R", "R_bar")]
OFFSET_PAIRS = [("b", "b", None), ("sigma", "sigma", None),
                ("q", "q", "q_bar"), ("r", "r", "r_bar")]

SYM_TOL = 1e-12
ROW_SUM_TOL = 1e-12


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ChainGenerator:
    """Generator (rate matrix) of a finite-state Markov chain."""

    rates: np.ndarray

    def __post_init__(self):
        rates = np.atleast_2d(np.asarray(self.rates, dtype=float))
        if rates.ndim != 2 or rates.shape[0] != rates.shape[1] or rates.shape[0] < 1:
            raise DimensionError(f"rate matrix must be square and nonempty, got shape {rates.shape}")
        object.__setattr__(self, "rates", _readonly(rates))

    @property
    def num_regimes(self) -> int:
        return self.rates.shape[0]

    @property
    def max_exit_rate(self) -> float:
        return float(np.max(-np.diag(self.rates)))

    @classmethod
    def from_offdiagonal(cls, off: np.ndarray) -> "ChainGenerator":
        """Build a generator whose diagonal makes every row sum to zero."""
        off = np.array(off, dtype=float)
        np.fill_diagonal(off, 0.0)
        np.fill_diagonal(off, -off.sum(axis=1))
        return cls(off)


def _expand(name: str, value, L: int, npts: int, tail: tuple, per_time: bool = True) -> np.ndarray:
    """Broadcast user input to the full ``(L, npts) + tail`` layout.

    Accepted ranks: ``tail`` (constant), ``(L,) + tail`` (per regime) and,
    for time-dependent fields, ``(L, npts) + tail``.
    """
    arr = np.asarray(value, dtype=float)
    k = len(tail)
    full = (L, npts) + tail if per_time else (L,) + tail
    if arr.ndim == 0:
        if any(d != 1 for d in tail):
            raise DimensionError(f"{name}: scalar given for shape {tail}")
        return np.full(full, float(arr))
    if arr.ndim == k and arr.shape == tail:
        return np.broadcast_to(arr, full).copy()
    if arr.ndim == k + 1 and arr.shape == (L,) + tail:
        if per_time:
            return np.broadcast_to(arr[:, None], full).copy()
        return arr.copy()
    if per_time and arr.ndim == k + 2 and arr.shape == full:
        return arr.copy()
    raise DimensionError(f"{name}: shape {arr.shape} incompatible with {full}")


def _interp_index(times: np.ndarray, t) -> tuple[np.ndarray, np.ndarray]:
    """Left node index and weight for linear interpolation on a uniform grid.

    Points within 1e-9 cells of a node snap to it, so samples at nodes are
    returned exactly.
    """
    t = np.asarray(t, dtype=float)
    s, T = times[0], times[-1]
    span = T - s
    tol = 1e-12 * max(1.0, abs(s), abs(T))
    if np.any(t < s - tol) or np.any(t > T + tol):
        raise ValueError(f"time outside horizon [{s}, {T}]")
    cells = len(times) - 1
    if cells == 0:
        return np.zeros(t.shape, dtype=int), np.zeros(t.shape)
    pos = (t - s) / span * cells
    near = np.rint(pos)
    pos = np.where(np.abs(pos - near) < 1e-9, near, pos)
    pos = np.clip(pos, 0.0, cells)
    idx = np.minimum(np.floor(pos).astype(int), cells - 1)
    return idx, pos - idx


def interpolate(samples: np.ndarray, times: np.ndarray, t) -> np.ndarray:
    """Linear interpolation of ``samples`` (time on axis 0) at ``t``.

    The result has shape ``np.shape(t) + samples.shape[1:]``.
    """
    idx, w = _interp_index(times, t)
    if len(times) == 1:
        return np.broadcast_to(samples[0], np.shape(t) + samples.shape[1:]).copy()
    w = w.reshape(w.shape + (1,) * (samples.ndim - 1))
    lo = samples[idx]
    hi = samples[idx + 1]
    return lo + w * (hi - lo) if np.any(w) else lo.copy()


@dataclass(frozen=True)
class ProblemSpec:
    """A complete problem instance.

    ``coefficients[name]`` has shape ``(L, N_grid + 1) + tail`` and
    ``terminal[name]`` has shape ``(L,) + tail``. Use :meth:`build` for
    convenient broadcasting of constant or per-regime data.
    """

    s: float
    T: float
    n: int
    m: int
    chain: ChainGenerator
    coefficients: Mapping[str, np.ndarray]
    terminal: Mapping[str, np.ndarray]
    initial_conditions: tuple = ()
    name: str = ""

    def __post_init__(self):
        coef = {k: _readonly(v) for k, v in self.coefficients.items()}
        term = {k: _readonly(v) for k, v in self.terminal.items()}
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "terminal", term)
        ics = tuple((_readonly(np.atleast_1d(x)), int(e)) for x, e in self.initial_conditions)
        object.__setattr__(self, "initial_conditions", ics)

    @classmethod
    def build(cls, chain, n: int, m: int, horizon=(0.0, 1.0), grid_intervals: int = 1,
              initial_conditions: Iterable = (), name: str = "", **data) -> "ProblemSpec":
        """Construct a problem, broadcasting each given field; omitted fields are zero."""
        if not isinstance(chain, ChainGenerator):
            chain = ChainGenerator(chain)
        L = chain.num_regimes
        npts = int(grid_intervals) + 1
        dims = {"n": int(n), "m": int(m)}
        unknown = set(data) - set(COEFFICIENT_FIELDS) - set(TERMINAL_FIELDS)
        if unknown:
            raise DimensionError(f"unknown coefficient names: {sorted(unknown)}")
        coef = {}
        for key, shape in COEFFICIENT_FIELDS.items():
            tail = tuple(dims[d] for d in shape)
            coef[key] = _expand(key, data.get(key, np.zeros(tail)), L, npts, tail)
        term = {}
        for key, shape in TERMINAL_FIELDS.items():
            tail = tuple(dims[d] for d in shape)
            term[key] = _expand(key, data.get(key, np.zeros(tail)), L, 1, tail, per_time=False)
        return cls(float(horizon[0]), float(horizon[1]), dims["n"], dims["m"], chain,
                   coef, term, tuple(initial_conditions), name)

    @property
    def num_regimes(self) -> int:
        return self.chain.num_regimes

    @property
    def grid_intervals(self) -> int:
        return self.coefficients["A"].shape[1] - 1

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.s, self.T, self.grid_intervals + 1)

    def at_time(self, t: float) -> dict[str, np.ndarray]:
        """All coefficients at time ``t`` with shape ``(L,) + tail``."""
        times = self.times
        return {k: interpolate(np.moveaxis(v, 1, 0), times, t) for k, v in self.coefficients.items()}

    def replace(self, **data) -> "ProblemSpec":
        """Copy with some fields replaced (broadcast like :meth:`build`)."""
        L, npts = self.num_regimes, self.grid_intervals + 1
        dims = {"n": self.n, "m": self.m}
        coef = dict(self.coefficients)
        term = dict(self.terminal)
        for key, value in data.items():
            if key in COEFFICIENT_FIELDS:
                tail = tuple(dims[d] for d in COEFFICIENT_FIELDS[key])
                coef[key] = _expand(key, value, L, npts, tail)
            elif key in TERMINAL_FIELDS:
                tail = tuple(dims[d] for d in TERMINAL_FIELDS[key])
                term[key] = _expand(key, value, L, 1, tail, per_time=False)
            else:
                raise DimensionError(f"unknown coefficient name {key!r}")
        return ProblemSpec(self.s, self.T, self.n, self.m, self.chain, coef, term,
                           self.initial_conditions, self.name)

    def is_homogeneous(self) -> bool:
        names = list(VECTOR_FIELDS) + ["g", "g_bar"]
        arrays = [self.coefficients.get(k, self.terminal.get(k)) for k in names]
        return all(not np.any(a) for a in arrays)


# ---------------------------------------------------------------- validation

@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    message: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple
    norms: Mapping[str, tuple] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def summary(self) -> str:
        if self.passed:
            return f"all {len(self.checks)} checks passed"
        return "; ".join(c.message for c in self.failures)


def validate(spec: ProblemSpec) -> ValidationReport:
    """Check every structural invariant of a problem. Never raises."""
    checks: list[Check] = []

    def add(name, ok, msg=""):
        checks.append(Check(name, bool(ok), "" if ok else msg))

    rates = spec.chain.rates
    L = rates.shape[0]
    add("regimes", L >= 1, "chain needs at least one regime")
    off = rates[~np.eye(L, dtype=bool)]
    bad = np.argwhere((rates < 0) & ~np.eye(L, dtype=bool))
    add("rates_nonnegative", off.size == 0 or np.all(off >= 0),
        f"negative off-diagonal rate at {tuple(int(i) for i in bad[0])}" if len(bad) else "")
    rows = np.abs(rates.sum(axis=1))
    add("rates_row_sums", np.all(rows <= ROW_SUM_TOL),
        f"rates row {int(np.argmax(rows))} does not sum to zero")
    add("rates_finite", np.all(np.isfinite(rates)), "non-finite rate")
    add("horizon", 0 <= spec.s < spec.T, f"horizon [{spec.s}, {spec.T}] must satisfy 0 <= s < T")
    add("dims", spec.n >= 1 and spec.m >= 1, "state and control dimensions must be >= 1")

    dims = {"n": spec.n, "m": spec.m}
    npts = None
    for key, shape in COEFFICIENT_FIELDS.items():
        arr = spec.coefficients.get(key)
        tail = tuple(dims[d] for d in shape)
        if arr is None:
            add(f"{key}_present", False, f"{key} missing")
            continue
        npts = npts or arr.shape[1] if arr.ndim >= 2 else npts
        ok = arr.ndim == 2 + len(tail) and arr.shape[0] == L and arr.shape[2:] == tail \
            and (npts is None or arr.shape[1] == npts)
        add(f"{key}_shape", ok, f"{key} has shape {arr.shape}, expected ({L}, N+1) + {tail}")
        bad = np.argwhere(~np.isfinite(arr))
        add(f"{key}_finite", len(bad) == 0,
            f"{key} not finite at regime {bad[0][0]}, grid index {bad[0][1]}" if len(bad) else "")
    for key, shape in TERMINAL_FIELDS.items():
        arr = spec.terminal.get(key)
        tail = tuple(dims[d] for d in shape)
        if arr is None:
            add(f"{key}_present", False, f"{key} missing")
            continue
        add(f"{key}_shape", arr.shape == (L,) + tail,
            f"{key} has shape {arr.shape}, expected {(L,) + tail}")
        bad = np.argwhere(~np.isfinite(arr))
        add(f"{key}_finite", len(bad) == 0,
            f"{key} not finite at regime {bad[0][0]}" if len(bad) else "")

    for key in SYMMETRIC_FIELDS:
        arr = spec.coefficients.get(key, spec.terminal.get(key))
        if arr is None or arr.shape[-1] != arr.shape[-2]:
            continue
        asym = np.abs(arr - np.swapaxes(arr, -1, -2)).max(axis=(-1, -2))
        bad = np.argwhere(~(asym <= SYM_TOL))
        if len(bad) == 0:
            add(f"{key}_symmetric", True)
        elif key in TERMINAL_FIELDS:
            add(f"{key}_symmetric", False, f"{key} not symmetric at regime {bad[0][0]}")
        else:
            add(f"{key}_symmetric", False,
                f"{key} not symmetric at regime {bad[0][0]}, grid index {bad[0][1]}")

    return ValidationReport(tuple(checks), _norms(spec))


def _norms(spec: ProblemSpec) -> dict[str, tuple]:
    """Sup norm and time-L2 norm (max over regimes) of every coefficient."""
    out = {}
    times = spec.times
    for key, arr in spec.coefficients.items():
        if not np.all(np.isfinite(arr)) or arr.ndim < 2:
            continue
        sq = (arr.reshape(arr.shape[0], arr.shape[1], -1) ** 2).sum(axis=-1)
        if len(times) > 1:
            l2 = np.sqrt(np.trapezoid(sq, times, axis=1)).max()
        else:
            l2 = np.sqrt(sq[:, 0] * (spec.T - spec.s)).max()
        out[key] = (float(np.abs(arr).max()) if arr.size else 0.0, float(l2))
    return out


# --------------------------------------------------------------------- split

@dataclass(frozen=True)
class SplitCoefficients:
    """Split coefficient families on the problem grid.

    ``pairs[name]`` has shape ``(N_grid + 1, 2, L) + tail`` where index 0 of
    the second axis is the family with subscript 1 (plain coefficient) and
    index 1 the family with subscript 2 (coefficient plus mean-field part).
    Terminal families are in ``terminal_pairs`` with shape ``(2, L) + tail``.
    """

    s: float
    T: float
    n: int
    m: int
    rates: np.ndarray
    times: np.ndarray
    pairs: Mapping[str, np.ndarray]
    terminal_pairs: Mapping[str, np.ndarray]

    @property
    def num_regimes(self) -> int:
        return self.rates.shape[0]

    def __getitem__(self, key: str) -> np.ndarray:
        """``split["A2"]`` -> samples of A_2 with shape ``(N+1, L) + tail``."""
        base, i = key[:-1], int(key[-1]) - 1
        if base in self.terminal_pairs:
            return self.terminal_pairs[base][i]
        return self.pairs[base][:, i]

    def sample(self, t) -> dict[str, np.ndarray]:
        """Every family at times ``t`` (scalar or array), shape ``t.shape + (2, L) + tail``."""
        return {k: interpolate(v, self.times, t) for k, v in self.pairs.items()}


@dataclass(frozen=True)
class CoefficientSlice:
    """Split coefficients at one ``(t, e)``, indexed like ``slice["B2"]``."""

    t: float
    e: int
    values: Mapping[str, np.ndarray]

    def __getitem__(self, key: str) -> np.ndarray:
        return self.values[key]


def split(spec: ProblemSpec) -> SplitCoefficients:
    """Form the subscript-1/subscript-2 coefficient families.

    For regime-measurable data the chain-orthogonal part of every
    nonhomogeneous term vanishes, so ``b1 = sigma1 = q1 = r1 = g1 = 0``.
    """
    L, npts = spec.num_regimes, spec.grid_intervals + 1
    dims = {"n": spec.n, "m": spec.m}
    c = spec.coefficients
    for key, shape in COEFFICIENT_FIELDS.items():
        want = (L, npts) + tuple(dims[d] for d in shape)
        if key not in c or c[key].shape != want:
            got = None if key not in c else c[key].shape
            raise DimensionError(f"{key} has shape {got}, expected {want}")
    for key, shape in TERMINAL_FIELDS.items():
        want = (L,) + tuple(dims[d] for d in shape)
        if key not in spec.terminal or spec.terminal[key].shape != want:
            raise DimensionError(f"terminal {key} has wrong shape, expected {want}")

    pairs = {}
    for fam, plain, bar in DYNAMIC_PAIRS + WEIGHT_PAIRS:
        one = c[plain]
        two = c[plain] + c[bar]
        pairs[fam] = _readonly(np.moveaxis(np.stack([one, two], axis=0), 2, 0))
    for fam, plain, bar in OFFSET_PAIRS:
        two = c[plain] + (c[bar] if bar else 0.0)
        pairs[fam] = _readonly(np.moveaxis(np.stack([np.zeros_like(two), two], axis=0), 2, 0))
    t = spec.terminal
    terminal = {
        "G": _readonly(np.stack([t["G"], t["G"] + t["G_bar"]])),
        "g": _readonly(np.stack([np.zeros_like(t["g"]), t["g"] + t["g_bar"]])),
    }
    return SplitCoefficients(spec.s, spec.T, spec.n, spec.m, spec.chain.rates,
                             _readonly(spec.times), pairs, terminal)


def coeff_at(sp: SplitCoefficients, t: float, e: int) -> CoefficientSlice:
    """All split matrices and vectors at ``(t, e)``."""
    if not 0 <= e < sp.num_regimes:
        raise IndexError(f"regime {e} out of range 0..{sp.num_regimes - 1}")
    if not sp.s <= t <= sp.T:
        raise ValueError(f"t={t} outside [{sp.s}, {sp.T}]")
    vals = {}
    for fam, arr in sp.sample(t).items():
        vals[fam + "1"] = arr[0, e]
        vals[fam + "2"] = arr[1, e]
    for fam, arr in sp.terminal_pairs.items():
        vals[fam + "1"] = arr[0, e]
        vals[fam + "2"] = arr[1, e]
    return CoefficientSlice(float(t), int(e), vals)


# ------------------------------------------------------------------ file I/O

def problem_from_dict(doc: Mapping) -> ProblemSpec:
    """Build a problem from the parsed JSON document (see docs/problem_format.md)."""
    try:
        chain = ChainGenerator(np.asarray(doc["chain"]["rates"], dtype=float))
        dims = doc["dims"]
        grid = doc["grid"]
        coefficients = dict(doc.get("coefficients", {}))
        terminal = dict(doc.get("terminal", {}))
    except (KeyError, TypeError) as exc:
        raise ProblemFormatError(f"missing or malformed section: {exc}") from None
    except ValueError as exc:
        raise ProblemFormatError(f"bad chain rates: {exc}") from None
    overlap = set(coefficients) & set(TERMINAL_FIELDS)
    if overlap:
        raise ProblemFormatError(f"terminal fields {sorted(overlap)} belong in 'terminal'")
    bad_terminal = set(terminal) - set(TERMINAL_FIELDS)
    if bad_terminal:
        raise ProblemFormatError(f"unknown terminal fields {sorted(bad_terminal)}")
    ics = []
    for item in doc.get("initial_conditions", []):
        try:
            ics.append((np.asarray(item["x0"], dtype=float), int(item.get("regime", 0))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ProblemFormatError(f"bad initial condition {item!r}: {exc}") from None
    try:
        return ProblemSpec.build(
            chain, int(dims["n"]), int(dims["m"]),
            horizon=(float(grid.get("s", 0.0)), float(grid["T"])),
            grid_intervals=int(grid.get("intervals", 1)),
            initial_conditions=ics, name=str(doc.get("name", "")),
            **coefficients, **terminal)
    except (KeyError, TypeError) as exc:
        raise ProblemFormatError(f"missing or malformed field: {exc}") from None
    except DimensionError as exc:
        raise ProblemFormatError(str(exc)) from None
    except ValueError as exc:
        raise ProblemFormatError(f"non-numeric data: {exc}") from None


def load_problem(path: str | Path) -> ProblemSpec:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemFormatError(f"invalid JSON: {exc.msg}", exc.lineno, exc.colno) from None
    if not isinstance(doc, dict):
        raise ProblemFormatError("top level must be an object", 1, 1)
    return problem_from_dict(doc)


def problem_to_dict(spec: ProblemSpec) -> dict:
    """Full (non-broadcast) JSON-ready representation."""
    return {
        "name": spec.name,
        "chain": {"rates": spec.chain.rates.tolist()},
        "dims": {"n": spec.n, "m": spec.m},
        "grid": {"s": spec.s, "T": spec.T, "intervals": spec.grid_intervals},
        "coefficients": {k: v.tolist() for k, v in spec.coefficients.items()},
        "terminal": {k: v.tolist() for k, v in spec.terminal.items()},
        "initial_conditions": [{"x0": x.tolist(), "regime": e} for x, e in spec.initial_conditions],
    }


def save_problem(spec: ProblemSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(problem_to_dict(spec), indent=1))
