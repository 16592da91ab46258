import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from mflq import ChainGenerator, StepTooLargeError, one_step_matrix, occupation_weights, simulate_path
from mflq.chain import RegimePath, path_rng, simulate_grid_path

GEN = ChainGenerator([[-1.0, 0.6, 0.4], [0.5, -0.5, 0.0], [1.0, 1.0, -2.0]])


def test_path_rng_is_counter_based():
    a = path_rng(7, 3, 1).random(5)
    assert np.array_equal(a, path_rng(7, 3, 1).random(5))
    assert not np.array_equal(a, path_rng(7, 4, 1).random(5))
    assert not np.array_equal(a, path_rng(7, 3, 0).random(5))


def test_simulate_path_reproducible_and_consistent():
    p = simulate_path(GEN, 0, 0.0, 5.0, 11)
    q = simulate_path(GEN, 0, 0.0, 5.0, 11)
    assert np.array_equal(p.jump_times, q.jump_times) and np.array_equal(p.states, q.states)
    assert p.jump_times[0] == 0.0 and np.all(np.diff(p.jump_times) > 0)
    assert p.jump_times[-1] < 5.0
    assert np.all(p.states[1:] != p.states[:-1])
    # state 1 never jumps to 2, state 2 jumps anywhere
    for a, b in zip(p.states[:-1], p.states[1:]):
        assert GEN.rates[a, b] > 0


def test_state_at_is_right_continuous():
    path = RegimePath([0.0, 0.3, 0.7], [0, 2, 1], 0.0, 1.0)
    assert path.state_at(0.3) == 2
    assert path.state_at(0.2999999) == 0
    assert list(occupation_weights(path, [0.0, 0.3, 0.5, 0.7, 1.0])) == [0, 2, 2, 1, 1]
    assert path.num_jumps == 2 and path.initial_state == 0


def test_absorbing_state_never_jumps():
    gen = ChainGenerator([[0.0, 0.0], [1.0, -1.0]])
    path = simulate_path(gen, 0, 0.0, 10.0, np.random.default_rng(0))
    assert path.num_jumps == 0


def test_exact_paths_match_matrix_exponential():
    M, t = 20000, 0.8
    rng = np.random.default_rng(5)
    ends = np.array([simulate_path(GEN, 0, 0.0, t, rng).state_at(t) for _ in range(M)])
    freq = np.bincount(ends, minlength=3) / M
    exact = expm(t * GEN.rates)[0]
    se = np.sqrt(exact * (1 - exact) / M)
    assert np.all(np.abs(freq - exact) <= 4 * se)


@given(st.floats(1e-4, 0.25))
def test_one_step_matrix_is_stochastic(dt):
    p = one_step_matrix(GEN, dt).p
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-14)
    assert np.all(p >= 0)
    off = ~np.eye(3, dtype=bool)
    assert np.allclose(p[off], dt * GEN.rates[off])


def test_one_step_matrix_rejects_large_steps():
    with pytest.raises(StepTooLargeError):
        one_step_matrix(GEN, 0.26)
    with pytest.raises(StepTooLargeError):
        one_step_matrix(GEN, 0.0)
    assert one_step_matrix(GEN, 0.25).p[2, 2] == pytest.approx(0.5)


def test_grid_path_distribution_matches_matrix_power():
    p = one_step_matrix(GEN, 0.1).p
    M, steps = 20000, 6
    ends = np.array([simulate_grid_path(p, 1, steps, path_rng(3, j))[-1] for j in range(M)])
    freq = np.bincount(ends, minlength=3) / M
    exact = np.linalg.matrix_power(p, steps)[1]
    se = np.sqrt(exact * (1 - exact) / M)
    assert np.all(np.abs(freq - exact) <= 4 * se + 1e-12)
