import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mflq import (ChainGenerator, DimensionError, ProblemFormatError, ProblemSpec, coeff_at,
                  load_problem, save_problem, split, validate)
from mflq.problem import COEFFICIENT_FIELDS, interpolate, problem_from_dict, problem_to_dict

from conftest import PROBLEM_DIR

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def two_regime(**data):
    return ProblemSpec.build([[-1.0, 1.0], [2.0, -2.0]], 2, 1, **data)


def test_build_broadcasts_constant_and_per_regime_data():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    spec = two_regime(A=A, B=np.array([[[1.0], [0.0]], [[0.5], [0.5]]]), R=1.0)
    assert spec.coefficients["A"].shape == (2, 2, 2, 2)
    assert np.array_equal(spec.coefficients["A"][1, 0], A)
    assert np.array_equal(spec.coefficients["B"][1, 1], [[0.5], [0.5]])
    assert spec.coefficients["R"].shape == (2, 2, 1, 1)
    assert not np.any(spec.coefficients["Q_bar"])
    assert spec.is_homogeneous()


def test_scalar_for_matrix_field_is_rejected():
    with pytest.raises(DimensionError, match="scalar given"):
        two_regime(A=1.0)


def test_unknown_field_is_rejected():
    with pytest.raises(DimensionError, match="unknown"):
        two_regime(Z=1.0)


def test_arrays_are_read_only():
    spec = two_regime(R=1.0)
    with pytest.raises(ValueError):
        spec.coefficients["R"][0, 0, 0, 0] = 2.0


def test_validate_passes_on_shipped_problems():
    for f in sorted(PROBLEM_DIR.glob("*.json")):
        rep = validate(load_problem(f))
        assert rep.passed, (f.name, rep.summary())


def test_validate_reports_negative_rate_and_row_sum():
    spec = ProblemSpec.build(np.array([[0.5, -0.5], [1.0, -1.0]]), 1, 1, R=1.0)
    rep = validate(spec)
    msgs = [c.message for c in rep.failures]
    assert "negative off-diagonal rate at (0, 1)" in msgs
    spec = ProblemSpec.build(np.array([[-1.0, 0.5], [1.0, -1.0]]), 1, 1, R=1.0)
    assert "rates row 0 does not sum to zero" in validate(spec).summary()


def test_validate_reports_asymmetry_with_location():
    Q = np.zeros((2, 3, 2, 2))
    Q[1, 2] = [[1.0, 0.3], [0.0, 1.0]]
    spec = ProblemSpec.build([[-1.0, 1.0], [2.0, -2.0]], 2, 1, grid_intervals=2, Q=Q)
    assert "Q not symmetric at regime 1, grid index 2" in validate(spec).summary()


def test_validate_reports_horizon_and_nonfinite():
    spec = ProblemSpec.build([[0.0]], 1, 1, horizon=(1.0, 1.0))
    assert not validate(spec).passed
    spec = ProblemSpec.build([[0.0]], 1, 1, A=np.nan)
    assert "A not finite at regime 0, grid index 0" in validate(spec).summary()


def test_validation_norms():
    A = np.zeros((1, 3, 1, 1))
    A[0, :, 0, 0] = [0.0, 1.0, 2.0]
    spec = ProblemSpec.build([[0.0]], 1, 1, horizon=(0.0, 2.0), grid_intervals=2, A=A)
    sup, l2 = validate(spec).norms["A"]
    assert sup == 2.0
    # trapezoid of t^2 on nodes 0, 1, 2
    assert l2 == pytest.approx(np.sqrt(0.5 * 1 + 0.5 * (1 + 4)))


def test_split_families():
    spec = two_regime(A=np.eye(2), A_bar=2 * np.eye(2), b=[1.0, 2.0], q=[1.0, 0.0],
                      q_bar=[0.5, 0.5], G=np.eye(2), G_bar=np.eye(2), g=[1.0, 1.0])
    sp = split(spec)
    assert np.array_equal(sp["A1"][0, 0], np.eye(2))
    assert np.array_equal(sp["A2"][0, 1], 3 * np.eye(2))
    assert not np.any(sp["b1"]) and np.array_equal(sp["b2"][0, 0], [1.0, 2.0])
    assert np.array_equal(sp["q2"][0, 0], [1.5, 0.5])
    assert np.array_equal(sp["G2"][1], 2 * np.eye(2))
    assert not np.any(sp["g1"])


@given(arrays(float, (2, 2), elements=finite), arrays(float, (2, 2), elements=finite))
def test_split_recombines(A, A_bar):
    sp = split(two_regime(A=A, A_bar=A_bar))
    assert np.allclose(sp["A2"] - sp["A1"], A_bar, atol=1e-12)
    assert np.array_equal(sp["A1"][0, 0], A)


def test_coeff_at_interpolates_and_checks_bounds():
    A = np.zeros((2, 3, 2, 2))
    A[:, 1] = np.eye(2)
    spec = ProblemSpec.build([[-1.0, 1.0], [2.0, -2.0]], 2, 1, grid_intervals=2, A=A)
    sp = split(spec)
    sl = coeff_at(sp, 0.25, 1)
    assert np.allclose(sl["A1"], 0.5 * np.eye(2))
    assert sl.e == 1 and sl.t == 0.25
    with pytest.raises((ValueError, IndexError)):
        coeff_at(sp, 1.5, 0)
    with pytest.raises(IndexError):
        coeff_at(sp, 0.5, 2)


@given(st.floats(0, 1), st.integers(1, 6))
def test_interpolation_is_exact_for_linear_data(t, cells):
    times = np.linspace(0.0, 1.0, cells + 1)
    samples = 3.0 * times - 1.0
    assert interpolate(samples, times, t) == pytest.approx(3.0 * t - 1.0, abs=1e-12)


def test_interpolation_hits_nodes_exactly():
    times = np.linspace(0.0, 1.0, 11)
    samples = np.sin(times)
    assert interpolate(samples, times, times[3]) == samples[3]


def test_chain_generator():
    gen = ChainGenerator.from_offdiagonal([[5.0, 1.0], [2.0, 7.0]])
    assert np.array_equal(gen.rates, [[-1.0, 1.0], [2.0, -2.0]])
    assert gen.max_exit_rate == 2.0
    with pytest.raises(DimensionError):
        ChainGenerator(np.zeros((2, 3)))


def test_json_round_trip(tmp_path):
    spec = load_problem(PROBLEM_DIR / "two_regime_planar.json")
    path = tmp_path / "p.json"
    save_problem(spec, path)
    back = load_problem(path)
    for key in COEFFICIENT_FIELDS:
        assert np.array_equal(back.coefficients[key], spec.coefficients[key])
    assert np.array_equal(back.chain.rates, spec.chain.rates)
    assert back.initial_conditions[0][1] == spec.initial_conditions[0][1]
    assert np.array_equal(back.initial_conditions[0][0], spec.initial_conditions[0][0])


@given(arrays(float, (2, 3, 1, 1), elements=finite), st.floats(0.1, 3.0))
def test_json_round_trip_time_dependent(A, T):
    spec = ProblemSpec.build([[-1.0, 1.0], [2.0, -2.0]], 1, 1, horizon=(0.0, T),
                             grid_intervals=2, A=A, R=1.0)
    back = problem_from_dict(json.loads(json.dumps(problem_to_dict(spec))))
    assert np.array_equal(back.coefficients["A"], spec.coefficients["A"])
    assert back.T == spec.T


def test_parse_error_has_line_info(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"chain": {"rates": [[0.0]]},\n "dims": {"n": 1 "m": 1}}\n')
    with pytest.raises(ProblemFormatError) as info:
        load_problem(path)
    assert info.value.line == 2
    assert "line 2" in str(info.value)


@pytest.mark.parametrize("doc, match", [
    ({"dims": {"n": 1, "m": 1}, "grid": {"T": 1.0}}, "missing"),
    ({"chain": {"rates": [[0.0]]}, "dims": {"n": 1, "m": 1}, "grid": {"T": 1.0},
      "coefficients": {"A": [1.0, 2.0]}}, "shape"),
    ({"chain": {"rates": [[0.0]]}, "dims": {"n": 1, "m": 1}, "grid": {"T": 1.0},
      "coefficients": {"G": 1.0}}, "terminal"),
    ({"chain": {"rates": [[0.0]]}, "dims": {"n": 1, "m": 1}, "grid": {"T": 1.0},
      "terminal": {"H": 1.0}}, "unknown"),
])
def test_structural_errors(doc, match):
    with pytest.raises(ProblemFormatError, match=match):
        problem_from_dict(doc)
