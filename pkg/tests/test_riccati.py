import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mflq import (BlowUpError, MaxIterations, NotStronglyRegular, ProblemSpec, RegularityError,
                  feedback_gains, iterate_strongly_regular, load_problem, pinv_cutoff,
                  riccati_rhs, solve_bsdre, split)
from mflq.generators import null_space_problem, random_problem, tanh_problem
from mflq.riccati import hermite, hypothesis_holds, pinv_psd

from conftest import PROBLEM_DIR

seeds = st.integers(0, 2**31 - 1)


def test_tanh_closed_form():
    sol = solve_bsdre(split(tanh_problem()), 400)
    exact = np.tanh(1.0 - sol.times)
    assert np.abs(sol.P[:, 1, 0, 0, 0] - exact).max() < 1e-10
    assert np.abs(sol.P[:, 0, 0, 0, 0] - exact).max() < 1e-10
    assert np.allclose(sol.Theta[:, 1, 0, 0, 0], -exact, atol=1e-10)
    assert sol.delta_min == pytest.approx(1.0)


def test_tanh_dense_output():
    sol = solve_bsdre(split(tanh_problem()), 200)
    t = np.linspace(0.0, 1.0, 777)
    assert np.abs(sol.P_at(t)[:, 1, 0, 0, 0] - np.tanh(1.0 - t)).max() < 1e-10


def test_riccati_rhs_scalar():
    sp = split(tanh_problem())
    d1, d2 = riccati_rhs(0.3, 0, [[[0.5]]], [[[0.2]]], sp)
    assert d1[0, 0] == pytest.approx(0.25 - 1.0)
    assert d2[0, 0] == pytest.approx(0.04 - 1.0)


@pytest.mark.parametrize("name", ["two_regime_scalar.json", "two_regime_planar.json",
                                  "null_space.json"])
def test_frozen_oracle(name, oracle_values):
    ref = oracle_values[name]
    sol = solve_bsdre(split(load_problem(PROBLEM_DIR / name)))
    assert np.abs(sol.P[0] - np.array(ref["P"])).max() < 1e-10


def test_defect_ratio_near_sixteen():
    sp = split(random_problem(np.random.default_rng(3)))
    r = [solve_bsdre(sp, g).residual_norm for g in (40, 80)]
    assert 12 <= r[0] / r[1] <= 20


@settings(max_examples=10)
@given(seeds)
def test_symmetric_and_psd(seed):
    sp = split(random_problem(np.random.default_rng(seed), nonhomogeneous=0.0))
    assert hypothesis_holds(sp)
    sol = solve_bsdre(sp, 200)
    assert np.array_equal(sol.P, np.swapaxes(sol.P, -1, -2))
    assert np.linalg.eigvalsh(sol.P).min() >= -1e-12
    assert sol.psd_ok and sol.range_ok


@settings(max_examples=10)
@given(seeds)
def test_regime_permutation_equivariance(seed):
    spec = random_problem(np.random.default_rng(seed), L=3, n=1, m=1)
    perm = [2, 0, 1]
    rates = spec.chain.rates[np.ix_(perm, perm)]
    data = {k: v[perm] for k, v in {**spec.coefficients, **spec.terminal}.items()}
    other = ProblemSpec.build(rates, 1, 1, **data)
    a = solve_bsdre(split(spec), 100).P
    b = solve_bsdre(split(other), 100).P
    assert np.allclose(b, a[:, :, perm], atol=1e-13)


@settings(max_examples=10)
@given(seeds, st.floats(0.1, 10.0))
def test_cost_scaling(seed, c):
    spec = random_problem(np.random.default_rng(seed), n=1, m=1)
    scaled = spec.replace(**{k: c * np.asarray(spec.coefficients[k]) for k in
                             ("Q", "Q_bar", "S", "S_bar", "R", "R_bar")},
                          **{k: c * np.asarray(spec.terminal[k]) for k in ("G", "G_bar")})
    a = solve_bsdre(split(spec), 100).P
    b = solve_bsdre(split(scaled), 100).P
    assert np.allclose(b, c * a, rtol=1e-11, atol=1e-13)


def test_time_shift_invariance():
    spec = random_problem(np.random.default_rng(8))
    shifted = ProblemSpec.build(spec.chain, spec.n, spec.m, horizon=(2.0, 3.0),
                                **spec.coefficients, **spec.terminal)
    a = solve_bsdre(split(spec), 100).P
    b = solve_bsdre(split(shifted), 100).P
    assert np.allclose(a, b, atol=1e-12)


def test_feedback_gains_match_solution():
    spec = random_problem(np.random.default_rng(4))
    sp = split(spec)
    sol = solve_bsdre(sp, 100)
    th1, th2 = feedback_gains(sol, sp)
    assert np.allclose(th1, sol.Theta1) and np.allclose(th2, sol.Theta2)
    assert np.allclose(sol.gains_at(sol.times[7]), sol.Theta[7], atol=1e-12)


def test_hermite_is_exact_for_cubics():
    times = np.linspace(0.0, 1.0, 5)
    Y = times ** 3 - times
    F = 3 * times ** 2 - 1
    t = np.linspace(0.0, 1.0, 31)
    assert np.allclose(hermite(times, Y, F, t), t ** 3 - t, atol=1e-14)


def test_pinv_psd_and_cutoff():
    R = np.diag([2.0, 1e-12])
    assert np.allclose(pinv_psd(R).pinv, np.diag([0.5, 0.0]))
    with pinv_cutoff(1e-14):
        assert pinv_psd(R).pinv[1, 1] == pytest.approx(1e12)
    assert pinv_psd(R).pinv[1, 1] == 0.0


def test_negative_control_weight_raises():
    spec = ProblemSpec.build([[0.0]], 1, 1, B=1.0, Q=1.0, R=-1.0)
    with pytest.raises(RegularityError) as info:
        solve_bsdre(split(spec), 100)
    assert info.value.t == pytest.approx(1.0)


def test_blow_up_raises_near_singularity():
    spec = ProblemSpec.build([[0.0]], 1, 1, B=1.0, Q=-10.0, R=1.0)
    with pytest.raises(BlowUpError) as info:
        solve_bsdre(split(spec), 2000)
    # P = -sqrt(10) tan(sqrt(10) (T - t)) is singular at T - t = pi / (2 sqrt 10)
    assert info.value.t == pytest.approx(1.0 - np.pi / (2 * np.sqrt(10.0)), abs=5e-3)


def test_singular_weight_solves_but_iteration_refuses():
    sp = split(null_space_problem())
    sol = solve_bsdre(sp)
    assert sol.range_ok and sol.delta_min == pytest.approx(0.0, abs=1e-9)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        with pytest.raises(NotStronglyRegular):
            iterate_strongly_regular(sp, 200)


def test_iteration_limit_reports_progress():
    sp = split(random_problem(np.random.default_rng(101)))
    with pytest.raises(MaxIterations) as info:
        iterate_strongly_regular(sp, 200, k_max=2)
    assert len(info.value.report.steps) == 2


def test_iteration_converges_monotonically():
    sp = split(random_problem(np.random.default_rng(102)))
    rep = iterate_strongly_regular(sp, 200)
    assert rep.converged and rep.monotone_ok and rep.hypothesis_ok
    assert np.abs(rep.solution.P - solve_bsdre(sp, 200).P).max() < 1e-9
    diffs = [s.max_diff for s in rep.steps]
    assert all(a >= b for a, b in zip(diffs[1:], diffs[2:]))


def test_gain_consistency():
    for spec in (random_problem(np.random.default_rng(6)), null_space_problem()):
        sp = split(spec)
        sol = solve_bsdre(sp, 200)
        _, Rc, Sc = sol.maps_at(sol.times)
        assert np.abs(Rc @ sol.Theta + Sc).max() < 1e-8
        assert np.all(np.isfinite(sol.Theta))


def test_no_mean_field_single_regime_families_coincide():
    spec = random_problem(np.random.default_rng(9), L=1, mean_field=False, nonhomogeneous=0.0)
    sol = solve_bsdre(split(spec), 200)
    assert np.abs(sol.P1 - sol.P2).max() < 1e-9


def test_identical_regimes_do_not_couple():
    sp = split(ProblemSpec.build([[-1.0, 1.0], [3.0, -3.0]], 1, 1, B=1.0, Q=1.0, R=1.0))
    P = np.full((2, 1, 1), 0.3)
    d1, _ = riccati_rhs(0.2, 0, P, P, sp)
    assert d1[0, 0] == pytest.approx(0.09 - 1.0)


def test_zero_weights_give_zero_solution():
    sp = split(ProblemSpec.build([[0.0]], 2, 1, A=np.eye(2), B=np.ones((2, 1)), R=0.0))
    sol = solve_bsdre(sp, 20)
    assert not np.any(sol.P) and not np.any(sol.Theta)
    rep = iterate_strongly_regular(split(ProblemSpec.build([[0.0]], 1, 1, A=1.0, B=1.0, R=1.0)), 20)
    assert rep.k_star == 1 and not np.any(rep.solution.P)


def test_first_iterate_on_tanh_is_linear():
    sp = split(tanh_problem())
    with pytest.raises(MaxIterations) as info:
        iterate_strongly_regular(sp, 100, k_max=1)
    P1 = info.value.report.solution.P[:, 1, 0, 0, 0]
    assert np.allclose(P1, 1.0 - info.value.report.solution.times, atol=1e-13)
    rep = iterate_strongly_regular(sp, 100)
    assert rep.monotone_ok and np.abs(rep.solution.P[:, 1, 0, 0, 0] - np.tanh(1.0 - rep.solution.times)).max() < 1e-8


def test_strong_regularity_threshold():
    from mflq import check_strong_regularity
    sol = solve_bsdre(split(tanh_problem()), 50)
    assert check_strong_regularity(sol, 1.0)
    assert check_strong_regularity(sol, 0.0)
    assert not check_strong_regularity(sol, 1.1)
