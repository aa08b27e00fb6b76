import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hfl.errors import DomainError, PreconditionError
from hfl.restricted import (greedy_selection, matrix_lp_norm, perturbed_identity,
                            restricted_invertibility)


def test_identity_selects_everything():
    res = restricted_invertibility(np.eye(16))
    assert res.branch == "T" and res.coordinates == tuple(range(16))
    assert res.chain_error == 0.0 and res.min_singular_value == 1.0


def test_zero_uses_complement():
    res = restricted_invertibility(np.zeros((8, 8)))
    assert res.branch == "Id-T" and len(res.sigma) == 8


def test_alternating_diagonal():
    T = np.diag([1.0, 0.0] * 8)
    res = restricted_invertibility(T)
    assert res.branch == "T"                     # an even split goes to T
    assert set(res.coordinates) == set(range(0, 16, 2))
    assert res.chain_error == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_perturbation_chain(seed):
    T = perturbed_identity(64, seed)
    assert np.max(np.abs(np.linalg.eigvals(T))) <= 1 + 1e-12
    res = restricted_invertibility(T)
    sub = res.S[np.ix_(res.sigma, res.sigma)]
    assert len(res.sigma) >= 4
    assert np.linalg.svd(sub, compute_uv=False)[-1] == pytest.approx(res.min_singular_value, abs=1e-8)
    H = T if res.branch == "T" else np.eye(64) - T
    chain = res.P2 @ res.P1 @ H @ res.E1 @ res.E2
    assert np.max(np.abs(chain - np.eye(len(res.sigma)))) <= 1e-9
    assert res.inverse_norm <= 2 + 1e-12


@settings(max_examples=25)
@given(arrays(np.float64, (10, 10), elements=st.floats(-1, 1)))
def test_greedy_selection_is_maximal(S):
    np.fill_diagonal(S, 1.0)
    sigma, history = greedy_selection(S, 0.5)
    if sigma:
        assert np.linalg.svd(S[np.ix_(sigma, sigma)], compute_uv=False)[-1] >= 0.5 - 1e-12
    for i in set(range(10)) - set(sigma):
        idx = sorted(sigma + [i])
        assert np.linalg.svd(S[np.ix_(idx, idx)], compute_uv=False)[-1] < 0.5
    assert sorted(h["added"] for h in history) == sigma


def test_eps_caps_restricted_norm():
    T = perturbed_identity(32, 3)
    loose = restricted_invertibility(T)
    tight = restricted_invertibility(T, eps=0.05)
    assert tight.restricted_norm <= 1.05 + 1e-12
    assert len(tight.sigma) <= len(loose.sigma)


def test_general_p_norms_are_upper_bounds():
    M = np.random.default_rng(0).standard_normal((6, 6))
    for p in (1.5, 3.0):
        x = np.random.default_rng(1).standard_normal(6)
        ratio = np.linalg.norm(M @ x, p) / np.linalg.norm(x, p)
        assert ratio <= matrix_lp_norm(M, p) * (1 + 1e-12)
    assert matrix_lp_norm(M, 2.0) == pytest.approx(np.linalg.norm(M, 2))


def test_bad_inputs():
    with pytest.raises(DomainError):
        restricted_invertibility(np.ones((2, 3)))
    with pytest.raises(DomainError):
        restricted_invertibility(np.full((2, 2), np.nan))
    with pytest.raises(PreconditionError):
        restricted_invertibility(np.eye(2), p=1.0)
