import math

import numpy as np
import pytest

from mflq import (SimConfig, Strategy, build_tree, compare_strategies, feedback_cost,
                  simulate_closed_loop, simulate_strategies, solve_bsdre, solve_eta, split,
                  value_function)
from mflq.acceptance import homogeneous
from mflq.generators import mild_scalar_problem, random_problem, tanh_problem
from mflq.montecarlo import paired_difference
from mflq.tree import solution_gains

SMALL = SimConfig(num_chain_paths=400, num_w_paths_per_chain=10, dt_sim=0.02, master_seed=7)


def solved(spec):
    sp = split(spec)
    ric = solve_bsdre(sp)
    eta = solve_eta(sp, ric)
    return sp, ric, eta


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(num_w_paths_per_chain=3)
    with pytest.raises(ValueError):
        SimConfig(scheme="midpoint")
    with pytest.raises(ValueError):
        SimConfig(dt_sim=0.3).steps(0.0, 1.0)
    assert SimConfig(dt_sim=0.1).steps(0.0, 1.0) == 10


def test_deterministic_problem_matches_value():
    spec = tanh_problem()
    sp, ric, eta = solved(spec)
    cfg = SimConfig(num_chain_paths=2, num_w_paths_per_chain=2, dt_sim=1e-3)
    rep = simulate_closed_loop(spec, Strategy.from_solution(ric, eta), [2.0], 0, cfg, sp)
    assert rep.std_error < 1e-15
    assert abs(rep.mean - 2 * math.tanh(1.0)) < 1e-10


def test_tanh_at_default_step():
    spec = tanh_problem()
    sp, ric, eta = solved(spec)
    cfg = SimConfig(num_chain_paths=50, num_w_paths_per_chain=2)
    rep = simulate_closed_loop(spec, Strategy.from_solution(ric, eta), [1.0], 0, cfg, sp)
    V = value_function(0.0, [1.0], 0, ric, eta, sp)
    assert abs(rep.mean - V) <= max(3 * rep.std_error, 1e-9)


def test_zero_state_of_homogeneous_problem_costs_nothing():
    spec = homogeneous(random_problem(np.random.default_rng(2)))
    sp, ric, eta = solved(spec)
    rep = simulate_closed_loop(spec, Strategy.from_solution(ric, eta), [0.0, 0.0], 1, SMALL, sp)
    assert rep.mean == 0.0 and rep.std_error == 0.0


def test_reproducible_and_thread_independent():
    spec = mild_scalar_problem(np.random.default_rng(0))
    sp, ric, eta = solved(spec)
    st = Strategy.from_solution(ric, eta)
    a = simulate_closed_loop(spec, st, [1.0], 0, SMALL, sp)
    b = simulate_closed_loop(spec, st, [1.0], 0, SMALL, sp)
    threaded = SimConfig(**{**vars(SMALL), "threads": 2, "batch_size": 50})
    c = simulate_closed_loop(spec, st, [1.0], 0, threaded, sp)
    assert np.array_equal(a.chain_means, b.chain_means)
    assert np.array_equal(a.chain_means, c.chain_means)
    other = simulate_closed_loop(spec, st, [1.0], 0, SimConfig(**{**vars(SMALL), "master_seed": 8}), sp)
    assert other.mean != a.mean


def test_identical_strategies_differ_by_exactly_zero():
    spec = mild_scalar_problem(np.random.default_rng(0))
    sp, ric, eta = solved(spec)
    st = Strategy.from_solution(ric, eta)
    rep = compare_strategies(spec, st, st, [1.0], 0, SMALL, sp)
    assert rep.mean_diff == 0.0 and rep.std_error == 0.0 and rep.z == 0.0
    assert not rep.b_beats_a


def test_zero_control_loses_clearly():
    spec = tanh_problem().replace(Q=10.0)
    sp, ric, eta = solved(spec)
    L, m, n = 1, 1, 1
    rep = compare_strategies(spec, Strategy.from_solution(ric, eta), Strategy.zero(L, m, n),
                             [1.0], 0, SimConfig(num_chain_paths=4, num_w_paths_per_chain=2), sp)
    # zero control costs Q T x0^2 / 2 = 5, the optimum sqrt(10) tanh(sqrt(10)) / 2
    assert rep.mean_diff == pytest.approx(5.0 - 0.5 * math.sqrt(10) * math.tanh(math.sqrt(10)),
                                          abs=1e-6)
    assert rep.z == math.inf


def test_unbiased_against_value_function():
    spec = mild_scalar_problem(np.random.default_rng(0))
    sp, ric, eta = solved(spec)
    cfg = SimConfig(num_chain_paths=2000, num_w_paths_per_chain=20, master_seed=3)
    rep = simulate_closed_loop(spec, Strategy.from_solution(ric, eta), [1.0], 0, cfg, sp)
    V = value_function(0.0, [1.0], 0, ric, eta, sp)
    assert abs(rep.mean - V) <= 3 * rep.std_error
    assert rep.between_var >= 0 and rep.within_var > 0


def test_euler_grid_scheme_matches_tree_law():
    spec = mild_scalar_problem(np.random.default_rng(0))
    sp, ric, eta = solved(spec)
    cfg = SimConfig(num_chain_paths=4000, num_w_paths_per_chain=20, dt_sim=1 / 6,
                    master_seed=3, scheme="euler", chain_sampling="grid")
    rep = simulate_closed_loop(spec, Strategy.from_solution(ric, eta), [1.0], 0, cfg, sp)
    tree_cost = feedback_cost(build_tree(spec, 6), spec, solution_gains(ric, eta), [1.0])["total"]
    assert abs(rep.mean - tree_cost) <= 3 * rep.std_error


def test_perturbations_lose_in_two_dimensions():
    spec = random_problem(np.random.default_rng(101))
    sp, ric, eta = solved(spec)
    best = Strategy.from_solution(ric, eta)
    rng = np.random.default_rng(0)
    others = [best.perturbed(0.3 * rng.normal(size=(2, 2, 2, 2)), 0.3 * rng.normal(size=(2, 2)))
              for _ in range(3)]
    reps = compare_strategies(spec, best, others, [1.0, -0.5], 0, SMALL, sp)
    assert all(r.mean_diff >= -3 * r.std_error for r in reps)
    assert not any(r.b_beats_a for r in reps)


def test_common_random_numbers_shared_across_calls():
    spec = mild_scalar_problem(np.random.default_rng(1))
    sp, ric, eta = solved(spec)
    a, b = Strategy.from_solution(ric, eta), Strategy.zero(2, 1, 1)
    joint = simulate_strategies(spec, [a, b], [1.0], 0, SMALL, sp)
    alone = simulate_closed_loop(spec, b, [1.0], 0, SMALL, sp)
    assert np.array_equal(joint[1].chain_means, alone.chain_means)
    pr = paired_difference(joint[0], joint[1])
    assert pr.std_error < math.hypot(joint[0].std_error, joint[1].std_error)


def test_x0_shape_checked():
    spec = mild_scalar_problem(np.random.default_rng(1))
    with pytest.raises(ValueError):
        simulate_closed_loop(spec, Strategy.zero(2, 1, 1), [1.0, 2.0], 0, SMALL)
