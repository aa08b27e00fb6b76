import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hfl.dyadic import DyadicInterval, enumerate_dn, from_canonical
from hfl.errors import DomainError, InsufficientCarleson, InsufficientDepth, NeumannBoundViolated
from hfl.factorization import (block_projection, build_projection_P, condense, default_m,
                               diagonal_split, embedding_matrix, factor_identity,
                               family_carleson, operator_norm, replay, restriction_matrix)
from hfl.haar import dimension, interval_weights
from hfl.operators import generate, identity, multiplier, zero
from hfl.selection import build_block_basis


def orthogonal_projection(V, w):
    """L^2 orthogonal projection onto the span of the columns of V, in coefficients."""
    G = V.T @ (w[:, None] * V)
    return V @ np.linalg.solve(G, V.T * w[None, :])


def test_split_of_identity():
    B = build_block_basis(identity(8), 2)
    split = diagonal_split(identity(8), B)
    assert set(split.L) == set(B.nodes()) and split.R == ()
    assert split.branch == "T" and split.carleson_L == 3


def test_split_of_zero():
    B = build_block_basis(zero(8), 2)
    split = diagonal_split(zero(8), B)
    assert split.L == () and split.branch == "Id-T"


def test_split_of_half_identity_counts_ties_in():
    T = multiplier(np.full(dimension(8), 0.5))
    B = build_block_basis(T, 2)
    split = diagonal_split(T, B)
    assert set(split.L) == set(B.nodes()) and split.branch == "T"


def test_condense_full_family_inverts_exactly():
    B = build_block_basis(identity(8), 2)
    sel = condense(B.nodes(), B, 1)
    assert sel.measure_bound_violations() == []
    E = embedding_matrix(B, sel, 2.0)
    R = restriction_matrix(B, sel, B.nodes(), 2.0)
    block_coords = np.linalg.lstsq(B.vectors(), E, rcond=None)[0]
    np.testing.assert_allclose(R @ block_coords, np.eye(dimension(1)), atol=1e-12)


def test_nested_chain_is_too_thin():
    # a chain I_0 > I_1 > ... packs at most 1 + 1/2 + 1/4 + ... < 2 under its top
    chain = [DyadicInterval(k, 1) for k in range(8)]
    assert family_carleson(chain) < 2
    with pytest.raises(InsufficientCarleson):
        condense(chain, None, 1)


def test_antichain_fails():
    antichain = list(enumerate_dn(3))[7:]
    assert family_carleson(antichain) == 1
    with pytest.raises(InsufficientCarleson) as info:
        condense(antichain, None, 1)
    assert info.value.diagnostics["carleson"] == 1.0


@pytest.mark.parametrize("n", [1, 2])
def test_complete_generations_condense(n):
    L = n * (1 << n)
    family = list(enumerate_dn(L - 1))
    assert family_carleson(family) == L
    sel = condense(family, None, n)
    assert sel.measure_bound_violations() == []
    assert [K for K in sel.nodes()] == [from_canonical(j) for j in range(1, 1 << (n + 1))]


@given(st.integers(1, 3), st.integers(0, 10 ** 6))
def test_condensation_is_a_tree(n, seed):
    rng = np.random.default_rng(seed)
    pool = list(enumerate_dn(7))
    family = [pool[i] for i in rng.choice(len(pool), size=120, replace=False)]
    try:
        sel = condense(family, None, n, threshold=0)
    except InsufficientCarleson:
        return
    for K in sel.nodes():
        blocks = sel.assignment[K]
        assert all(J in family for J in blocks)
        if K.level < n:
            left, right = K.halves()
            for child, side in ((left, 0), (right, 1)):
                for J in sel.assignment[child]:
                    parents = [M for M in blocks if M.contains(J) and M != J]
                    assert len(parents) == 1
                    assert J.ancestor(parents[0].level + 1) == parents[0].halves()[side]


def test_projection_of_identity_is_orthogonal():
    B = build_block_basis(identity(6), 2)
    proj = block_projection(identity(6), B, B.nodes())
    w = interval_weights(6)
    Q = orthogonal_projection(B.vectors(), w)
    c = np.random.default_rng(0).standard_normal(dimension(6))
    np.testing.assert_allclose(proj.apply(c), Q @ c, atol=1e-12)
    half = block_projection(multiplier(np.full(dimension(6), 0.5)), B, B.nodes())
    np.testing.assert_allclose(half.apply(c), 2 * Q @ c, atol=1e-12)


def test_projection_rejects_small_diagonal():
    B = build_block_basis(zero(6), 1)
    with pytest.raises(DomainError):
        block_projection(zero(6), B, B.nodes())


def test_factor_identity_operator():
    cert = factor_identity(identity(10), 1)
    assert cert.branch == "T" and cert.residual <= 1e-12
    assert cert.norm_product == pytest.approx(1.0, abs=1e-9)
    assert cert.error_term == 0.0 and cert.neumann_ok


def test_factor_zero_uses_complement():
    cert = factor_identity(zero(10), 1)
    assert cert.branch == "Id-T" and cert.residual <= 1e-12


def test_factor_half_identity():
    cert = factor_identity(multiplier(np.full(dimension(10), 0.5)), 1)
    assert cert.residual <= 1e-12
    assert cert.norm_P == pytest.approx(2.0)


@settings(max_examples=10)
@given(st.integers(0, 10 ** 6))
def test_multipliers_factor_exactly(seed):
    T = generate(f"multiplier:bernoulli(0.5):seed={seed}", 10)
    cert = factor_identity(T, 1, m=4)
    assert cert.residual <= 1e-10 and cert.error_term <= 1e-12


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_random_contraction_best_effort(p):
    T = generate("random:seed=9", 12, p=p)
    cert = factor_identity(T, 1, p=p)
    assert cert.mode == "best-effort"
    assert cert.residual <= 1e-9
    assert cert.contraction <= 0.5
    assert np.isfinite(cert.norm_E) and np.isfinite(cert.norm_P)


def test_certificate_replays():
    T = generate("random:seed=4", 10)
    cert = factor_identity(T, 1)
    data = json.loads(json.dumps(cert.to_json()))
    assert replay(data, T) == pytest.approx(cert.residual, abs=1e-12)


def test_projection_P_matches_uncorrected():
    T = identity(8)
    cert = factor_identity(T, 1, m=2)
    B = build_block_basis(T, 2)
    P0 = build_projection_P(T, B, cert.family, cert.selection)
    np.testing.assert_allclose(P0, cert.P_uncorrected, atol=1e-12)


def test_conformant_records_theory_conditions():
    cert = factor_identity(identity(12), 1, mode="conformant")
    assert cert.m == default_m(1, 2.0, "conformant") == 8
    assert all(cert.theory_conditions.values()) and cert.mode == "conformant"


def test_conformant_needs_depth():
    with pytest.raises(InsufficientDepth) as info:
        factor_identity(identity(10), 2, mode="conformant")
    assert info.value.diagnostics["required_m"] == 32


def test_strict_mode_raises_on_bad_contraction(monkeypatch):
    import hfl.factorization as fz
    original = fz._factor_at

    def loose(*args):
        cert = original(*args)
        cert.neumann_ok, cert.contraction = False, 0.75
        return cert

    monkeypatch.setattr(fz, "_factor_at", loose)
    assert factor_identity(identity(8), 1).outcome == "non-conformant"
    with pytest.raises(NeumannBoundViolated) as info:
        factor_identity(identity(8), 1, strict=True)
    assert info.value.partial.contraction == 0.75


def test_operator_norm_of_identity_matrix():
    assert operator_norm(np.eye(dimension(3)), 3, 3, 2.0) == pytest.approx(1.0)
    # away from p = 2 the value is an upper bound for the mean-zero projection
    for p in (1.5, 3.0):
        assert 1.0 <= operator_norm(np.eye(dimension(3)), 3, 3, p) <= 2.0


def test_family_carleson_empty_is_zero():
    assert family_carleson([]) == Fraction(0)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_block_projection_at_most_twice_orthogonal(seed):
    T = generate(f"random:seed={seed}", 10)
    B = build_block_basis(T, 2)
    split = diagonal_split(T, B)
    proj = block_projection(T, B, split.L)
    assert proj.norm2() <= 2.0 + 1e-12


@pytest.mark.parametrize("seed", [1, 2, 3, 4])
def test_diagonal_families_of_T_and_complement(seed):
    T = generate(f"random:seed={seed}", 10)
    B = build_block_basis(T, 2)
    a, b = diagonal_split(T, B), diagonal_split(T.complement(), B)
    nodes = set(B.nodes())
    assert set(a.L) | set(b.L) == nodes
    # a node lands in both only when its diagonal is negative (or a tie)
    for I in set(a.L) & set(b.L):
        d, s = a.diagonal[I], a.norms[I]
        assert d < 0 or abs(d) == s / 2 or abs(s - d) == s / 2


def test_split_partition_for_nonnegative_multiplier():
    vals = np.random.default_rng(2).uniform(0, 1, dimension(8))
    T = multiplier(vals)
    B = build_block_basis(T, 2)
    a, b = diagonal_split(T, B), diagonal_split(T.complement(), B)
    assert set(a.L).isdisjoint(b.L) or any(a.diagonal[I] == a.norms[I] / 2 for I in a.L)
    assert set(a.L) | set(b.L) == set(B.nodes())


@pytest.mark.parametrize("seed", [5, 6, 7])
def test_restriction_inverts_embedding(seed):
    T = generate(f"random:seed={seed}", 12)
    cert = factor_identity(T, 1)
    B = build_block_basis(T, cert.m)
    R = restriction_matrix(B, cert.selection, cert.family, 2.0)
    nodes = [I for I in B.nodes() if I in set(cert.family)]
    V = np.stack([B.vector(I) for I in nodes], axis=1)
    coords = np.linalg.lstsq(V, cert.E, rcond=None)[0]
    np.testing.assert_allclose(R @ coords, np.eye(dimension(1)), atol=1e-12)
