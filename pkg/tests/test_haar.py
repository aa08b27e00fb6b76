import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from hfl.dyadic import ROOT, DyadicInterval
from hfl.errors import DomainError, PreconditionError
from hfl.haar import (HaarExpansion, NormConstants, StepFunction, analyze, check_lower_l2,
                      check_square_equivalence, dimension, h1_norm, h1_norm_coefficients,
                      haar_coefficients, haar_function, indicator, inner, interval_weights,
                      lp_norm, position, square_function, synthesize, synthesize_vector)
from hfl.oracles import haar_pairings_at_level, square_function_direct

finite = st.floats(-1e3, 1e3, allow_nan=False)


@st.composite
def step_functions(draw, max_res=9):
    R = draw(st.integers(1, max_res))
    return StepFunction(R, draw(arrays(np.float64, 1 << R, elements=finite)))


def test_haar_function_shape():
    h = haar_function(DyadicInterval(1, 2), 3)
    assert list(h.values) == [0, 0, 0, 0, 1, 1, -1, -1]
    with pytest.raises(DomainError):
        haar_function(ROOT, 0)


def test_coefficients_of_single_haar():
    I = DyadicInterval(3, 5)
    c = haar_coefficients(haar_function(I), 3)
    expected = np.zeros(dimension(3))
    expected[position(I)] = 1.0
    np.testing.assert_array_equal(c, expected)


@given(step_functions())
def test_coefficients_match_direct_pairings(f):
    N = f.resolution - 1
    c = haar_coefficients(f, N)
    w = interval_weights(N)
    direct = np.concatenate([haar_pairings_at_level(f, n) for n in range(N + 1)])
    np.testing.assert_allclose(c * w, direct, atol=1e-9)


@given(step_functions())
def test_synthesis_recovers_mean_zero_part(f):
    N = f.resolution - 1
    back = synthesize(analyze(f, N))
    np.testing.assert_allclose(back.values, f.values - f.mean(), atol=1e-9)


@given(step_functions())
def test_parseval(f):
    g = f - StepFunction(0, [f.mean()])
    assert abs(lp_norm(square_function(g), 2) - lp_norm(g, 2)) <= 1e-9 * (1 + lp_norm(g, 2))


@given(step_functions())
def test_square_function_matches_direct(f):
    N = f.resolution - 1
    np.testing.assert_allclose(square_function(f, N).values, square_function_direct(f, N),
                               atol=1e-9)


@given(step_functions(), st.sampled_from([1.5, 3.0]))
def test_equivalence_ratio_within_working_constants(f, p):
    if np.ptp(f.values) < 1e-6:
        return
    report = check_square_equivalence(f, p)
    assert report.within, report


def test_equivalence_undefined_for_constants():
    with pytest.raises(DomainError):
        check_square_equivalence(StepFunction(2, np.ones(4)), 2.0)


def test_norm_constants():
    c = NormConstants(2.0)
    assert (c.q, c.C_p, c.c_p) == (2.0, 4.0, 0.25)
    assert NormConstants(3.0).q == 1.5
    for bad in (1.0, 0.5, math.inf):
        with pytest.raises(DomainError):
            NormConstants(bad)


def test_h1_of_haar_function():
    # S(h_I) = 1_I, so ||h_I||_{H^1} = |I|
    I = DyadicInterval(4, 7)
    assert h1_norm(haar_function(I), 4) == pytest.approx(1 / 16)


def test_h1_coefficients_agree():
    rng = np.random.default_rng(3)
    c = rng.standard_normal(dimension(6))
    f = StepFunction(7, synthesize_vector(c, 6))
    assert h1_norm_coefficients(c, 6) == pytest.approx(h1_norm(f, 6))


@given(st.integers(1, 8), st.integers(2, 6), st.integers(0, 2 ** 32 - 1))
def test_lower_l2_with_constant_four(N, parts, seed):
    rng = np.random.default_rng(seed)
    owner = rng.integers(0, parts, dimension(N))
    c = rng.standard_normal(dimension(N)) * (rng.random(dimension(N)) < 0.7)
    ys = [StepFunction(N + 1, synthesize_vector(np.where(owner == t, c, 0.0), N))
          for t in range(parts)]
    a = rng.standard_normal(parts)
    report = check_lower_l2(ys, a, N)
    assert report.holds
    # disjoint supports give the estimate even with constant 1
    assert report.lhs <= report.rhs / 4 + 1e-12


def test_lower_l2_requires_disjoint_supports():
    h = haar_function(ROOT, 1)
    with pytest.raises(PreconditionError):
        check_lower_l2([h, h], [1.0, 1.0])


def test_inner_and_indicator():
    I = DyadicInterval(2, 1)
    assert inner(indicator(I), indicator(ROOT, 3)) == pytest.approx(0.25)
    assert inner(haar_function(I), haar_function(I)) == pytest.approx(0.25)


def test_step_function_json_roundtrip():
    f = StepFunction(3, np.arange(8.0))
    g = StepFunction.from_json(f.to_json())
    np.testing.assert_array_equal(f.values, g.values)


def test_step_function_does_not_freeze_caller_array():
    raw = np.zeros(4)
    StepFunction(2, raw)
    raw[0] = 1.0


def test_step_function_validation():
    with pytest.raises(DomainError):
        StepFunction(2, np.zeros(3))
    with pytest.raises(DomainError):
        StepFunction(1, [np.nan, 0.0])


def test_expansion_json_roundtrip():
    rng = np.random.default_rng(0)
    e = HaarExpansion(4, rng.standard_normal(dimension(4)))
    back = HaarExpansion.from_json(e.to_json())
    np.testing.assert_array_equal(e.coefficients, back.coefficients)
    assert e[DyadicInterval(6, 1)] == 0.0
    with pytest.raises(DomainError):
        HaarExpansion.from_json({"N": 1, "coeffs": {"3:1": 1.0}})
