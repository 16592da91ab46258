"""Markov chain paths, seeding and one-step transition matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StepTooLargeError
from .problem import ChainGenerator

MAX_STEP_RATE = 0.5


def path_rng(master_seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for one path.

    The stream only depends on ``(master_seed, index, stream)``, so paths can
    be simulated in any order or in parallel with identical results.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(master_seed), int(index), int(stream)])))


@dataclass(frozen=True)
class RegimePath:
    """Piecewise-constant right-continuous regime path on ``[s, T]``.

    ``states[k]`` is active on ``[jump_times[k], jump_times[k+1])``; the first
    entry of ``jump_times`` is the start time ``s``.
    """

    jump_times: np.ndarray
    states: np.ndarray
    s: float
    T: float

    def __post_init__(self):
        jt = np.array(self.jump_times, dtype=float)
        st = np.array(self.states, dtype=int)
        jt.setflags(write=False)
        st.setflags(write=False)
        object.__setattr__(self, "jump_times", jt)
        object.__setattr__(self, "states", st)

    @property
    def initial_state(self) -> int:
        return int(self.states[0])

    @property
    def num_jumps(self) -> int:
        return len(self.states) - 1

    def state_at(self, t) -> np.ndarray:
        """Regime at ``t`` (post-jump value at a jump time)."""
        idx = np.searchsorted(self.jump_times, t, side="right") - 1
        return self.states[np.clip(idx, 0, len(self.states) - 1)]


def simulate_path(gen: ChainGenerator, e0: int, s: float, T: float, rng) -> RegimePath:
    """Exact sample of the chain on ``[s, T]`` started in ``e0``.

    ``rng`` is a ``numpy.random.Generator`` or an integer seed.
    """
    if not isinstance(rng, np.random.Generator):
        rng = path_rng(int(rng), 0)
    rates = gen.rates
    times = [float(s)]
    states = [int(e0)]
    t, e = float(s), int(e0)
    while True:
        exit_rate = -rates[e, e]
        if exit_rate <= 0:
            break
        t += rng.exponential(1.0 / exit_rate)
        if t >= T:
            break
        p = np.clip(rates[e], 0.0, None)
        p[e] = 0.0
        e = int(rng.choice(len(p), p=p / p.sum()))
        times.append(t)
        states.append(e)
    return RegimePath(np.array(times), np.array(states), float(s), float(T))


@dataclass(frozen=True)
class TransitionMatrixCache:
    dt: float
    p: np.ndarray


def one_step_matrix(gen: ChainGenerator, dt: float) -> TransitionMatrixCache:
    """First-order transition matrix ``I + dt * rates``.

    Raises :class:`StepTooLargeError` unless ``dt * max exit rate <= 0.5``;
    clamping negative probabilities instead would bias the tree.
    """
    if dt <= 0:
        raise StepTooLargeError(f"step must be positive, got {dt}")
    if dt * gen.max_exit_rate > MAX_STEP_RATE + 1e-15:
        raise StepTooLargeError(
            f"dt * max exit rate = {dt * gen.max_exit_rate:.6g} exceeds {MAX_STEP_RATE}")
    L = gen.num_regimes
    p = dt * gen.rates
    off = ~np.eye(L, dtype=bool)
    p[~off] = 0.0
    p[np.diag_indices(L)] = 1.0 - p.sum(axis=1)
    p.setflags(write=False)
    return TransitionMatrixCache(float(dt), p)


def occupation_weights(path: RegimePath, grid) -> np.ndarray:
    """Active regime at every grid time (cadlag convention)."""
    grid = np.asarray(grid, dtype=float)
    return path.state_at(grid).astype(int)


def simulate_grid_path(p: np.ndarray, e0: int, steps: int, rng: np.random.Generator) -> np.ndarray:
    """Regimes at ``steps + 1`` grid nodes drawn from the one-step matrix ``p``."""
    cum = np.cumsum(p, axis=1)
    cum[:, -1] = 1.0
    out = np.empty(steps + 1, dtype=int)
    out[0] = e0
    u = rng.random(steps)
    for k in range(steps):
        out[k + 1] = int(np.searchsorted(cum[out[k]], u[k], side="right"))
    return out
