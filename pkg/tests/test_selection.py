import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hfl.dyadic import ROOT, DyadicInterval, from_canonical
from hfl.errors import DomainError, InsufficientDepth, PreconditionError
from hfl.haar import StepFunction, haar_function
from hfl.operators import generate, identity, multiplier, zero
from hfl.oracles import admissible, sparse_level_scan
from hfl.haar import dimension, interval_weights, position
from hfl.selection import (BlockBasis, ThinningParams, build_block_basis, good_intervals, offdiagonal_forms,
                           random_admissible_pair, select_sparse_level, verify_block_basis)


def test_thinning_params():
    params = ThinningParams(2, 3, 2.0)
    assert params.A_p == 4 * 9 * 8 + 1
    with pytest.raises(DomainError):
        ThinningParams(0, 1, 2.0)
    with pytest.raises(DomainError):
        ThinningParams(1, 1, 1.0)


@given(st.integers(0, 2 ** 31), st.sampled_from([1.5, 2.0, 3.0]),
       st.integers(1, 4), st.integers(1, 4), st.integers(0, 2))
def test_sparse_level_matches_scan(seed, p, k, ell, level):
    I = DyadicInterval(level, 1 + seed % (1 << level))
    depth = 8
    x, y = random_admissible_pair(I, depth, p, seed)
    assert admissible(x, y, I, p)
    params = ThinningParams(k, ell, p)
    got = select_sparse_level(x, y, I, params, depth=depth)
    bound = min(math.floor(params.A_p), depth)
    want, counts = sparse_level_scan(x, y, I, k, ell, bound)
    assert got.level == want
    assert list(got.bad_counts) == counts
    assert all(I.contains(J) and J.level == I.level + got.level for J in got.bad)
    assert len(got.bad) * ell <= 1 << got.level


def test_zero_pair_is_sparse_at_first_level():
    x = y = StepFunction.zeros(4)
    got = select_sparse_level(x, y, ROOT, ThinningParams(1, 1, 2.0), depth=3)
    assert got.level == 1 and len(got.bad) == 0


def test_sparse_level_rejects_inadmissible_pair():
    x = StepFunction(3, np.full(8, 2.0))
    with pytest.raises(PreconditionError):
        select_sparse_level(x, StepFunction.zeros(3), ROOT, ThinningParams(1, 1, 2.0))


def test_sparse_level_reports_missing_depth():
    # both level-1 coefficients are 0.99 > 1/k, so level 1 is all bad
    x = 0.99 * (haar_function(DyadicInterval(1, 1), 3) + haar_function(DyadicInterval(1, 2), 3))
    with pytest.raises(InsufficientDepth) as info:
        select_sparse_level(x, StepFunction.zeros(3), ROOT, ThinningParams(2, 4, 2.0), depth=1)
    assert info.value.diagnostics["deepest_level"] == 1


def test_block_basis_of_identity_is_haar_like():
    B = build_block_basis(identity(8), 3)
    check = verify_block_basis(B, identity(8))
    assert check["all_ok"]
    assert all(row["offdiag_sum"] == 0.0 for row in check["offdiagonal"])
    assert len(B.nodes()) == 15


@pytest.mark.parametrize("op", ["zero", "multiplier:sign:seed=2", "perm:seed=1"])
def test_block_basis_simple_operators(op):
    T = generate(op, 10)
    B = build_block_basis(T, 3)
    assert verify_block_basis(B, T)["all_ok"]


@pytest.mark.parametrize("seed", [1, 3, 11])
def test_block_basis_random_contraction(seed):
    T = generate(f"random:seed={seed}", 12)
    B = build_block_basis(T, 2)
    check = verify_block_basis(B, T)
    assert check["all_ok"], check
    for row in check["offdiagonal"]:
        assert row["offdiag_sum"] <= row["norm2_sq"] * 4.0 ** -row["index"]


def test_offdiagonal_forms_match_dense_quadrature():
    T = generate("random:seed=2", 8)
    B = build_block_basis(T, 2)
    F = offdiagonal_forms(B, T)
    V = B.vectors()
    W = np.diag(T.weights)
    np.testing.assert_allclose(F, V.T @ W @ T.to_dense() @ V, atol=1e-12)


def test_block_basis_needs_a_contraction():
    with pytest.raises(PreconditionError):
        build_block_basis(multiplier(np.full(15, 2.0)), 1)


def test_block_basis_needs_depth():
    with pytest.raises(PreconditionError):
        build_block_basis(identity(3), 4)
    T = generate("random:seed=1:weight=1", 4)
    with pytest.raises(InsufficientDepth) as info:
        build_block_basis(T, 3)
    assert info.value.partial is not None


def test_block_basis_json_roundtrip():
    B = build_block_basis(identity(5), 2)
    back = BlockBasis.from_json(B.to_json())
    assert back.collections == B.collections
    assert back.tree().check().ok


def test_verifier_catches_broken_tree():
    B = build_block_basis(identity(5), 2)
    broken = dict(B.collections)
    broken[from_canonical(2)], broken[from_canonical(3)] = broken[from_canonical(3)], broken[from_canonical(2)]
    check = verify_block_basis(BlockBasis(2, 5, broken), identity(5))
    assert not check["sign_nesting"] and not check["all_ok"]


def _haar_vector(I, N):
    b = np.zeros(dimension(N))
    b[position(I)] = 1.0
    return b


def test_good_intervals_identity_disjoint_support():
    N = 6
    built = [_haar_vector(ROOT, N), _haar_vector(DyadicInterval(1, 1), N)]
    candidates = DyadicInterval(1, 2).subintervals(3)
    good, g = good_intervals(identity(N), built, candidates, stage=2)
    assert good == candidates and all(v == 0.0 for v in g.values())
    # a built function's own interval interacts fully with it
    good, g = good_intervals(identity(N), built, [ROOT], stage=2)
    assert good == [] and g[ROOT] == 2.0


def test_good_intervals_zero_operator():
    N = 5
    built = [np.ones(dimension(N))]
    cands = [from_canonical(j) for j in range(1, dimension(N) + 1)]
    good, g = good_intervals(zero(N), built, cands, stage=3)
    assert good == cands


def test_good_intervals_match_recomputation():
    N = 7
    T = generate("random:seed=2:weight=0.5", N)
    rng = np.random.default_rng(0)
    built = [(rng.random(dimension(N)) < 0.1).astype(float) for _ in range(2)]
    cands = DyadicInterval(2, 3).subintervals(3)
    good, g = good_intervals(T, built, cands, stage=2)
    w = interval_weights(N)
    M = T.to_dense()
    for J in cands:
        # <H b, h_J> = c_J(H b) |J| and <H* b, h_J> = <b, H h_J> = (M^T W b)_J
        direct = sum(abs((M @ b)[position(J)]) * float(J.measure)
                     + abs((M.T @ (w * b))[position(J)]) for b in built)
        assert g[J] == pytest.approx(direct, rel=1e-10, abs=1e-15)
        assert (J in good) == (g[J] <= float(J.measure) * 4.0 ** -3)
