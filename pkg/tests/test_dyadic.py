from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from hfl.dyadic import (ROOT, DyadicInterval, DyadicTreeOfSets, IntervalFamily, canonical_index,
                        carleson_brute_force, carleson_constant, enumerate_dn, from_canonical,
                        is_dyadic_tree, pairwise_disjoint, partition_pigeonhole, set_contains,
                        sets_disjoint, union_measure)
from hfl.errors import DomainError, ResourceLimitError


@st.composite
def intervals(draw, max_level=8):
    level = draw(st.integers(0, max_level))
    return DyadicInterval(level, draw(st.integers(1, 1 << level)))


@st.composite
def families(draw, max_level=7, max_size=40):
    return IntervalFamily(draw(st.sets(intervals(max_level), min_size=1, max_size=max_size)))


def test_interval_basics():
    I = DyadicInterval(2, 3)
    assert (I.left, I.right, I.measure) == (Fraction(1, 2), Fraction(3, 4), Fraction(1, 4))
    assert I.halves() == (DyadicInterval(3, 5), DyadicInterval(3, 6))
    assert I.parent == DyadicInterval(1, 2)
    assert ROOT.parent is None
    assert I.is_left_half() and not DyadicInterval(2, 4).is_left_half()
    assert I.cell_range(4) == (8, 12)
    assert DyadicInterval.parse("2:3") == I and I.literal == "2:3"


@pytest.mark.parametrize("level,index", [(-1, 1), (0, 2), (3, 0), (3, 9)])
def test_interval_rejects_out_of_range(level, index):
    with pytest.raises(DomainError):
        DyadicInterval(level, index)


@pytest.mark.parametrize("text", ["x", "1:", "1:2:3", "a:b", "2:5"])
def test_bad_literals(text):
    with pytest.raises(DomainError):
        DyadicInterval.parse(text)


@given(intervals(12))
def test_canonical_roundtrip(I):
    j = canonical_index(I)
    assert from_canonical(j) == I
    left, right = I.halves()
    assert canonical_index(left) == 2 * j and canonical_index(right) == 2 * j + 1


@given(intervals(10), st.integers(0, 4))
def test_subintervals_tile(I, depth):
    subs = I.subintervals(depth)
    assert len(subs) == 1 << depth
    assert all(I.contains(J) for J in subs)
    assert union_measure(subs) == I.measure and pairwise_disjoint(subs)


@given(intervals(10), intervals(10))
def test_containment_is_point_set_inclusion(I, J):
    assert I.contains(J) == (I.left <= J.left and J.right <= I.right)


def test_enumerate_dn():
    fam = enumerate_dn(3)
    assert len(fam) == 15 and fam.members[0] == ROOT
    assert fam.measure() == 1


def test_family_rejects_duplicates_and_levels():
    with pytest.raises(DomainError):
        IntervalFamily([ROOT, ROOT])
    with pytest.raises(DomainError):
        IntervalFamily([DyadicInterval(4, 1)], max_level=3)
    with pytest.raises(DomainError):
        IntervalFamily([ROOT, DyadicInterval(1, 1)], disjoint=True)


def test_max_level_override(monkeypatch):
    monkeypatch.setenv("HFL_MAX_LEVEL", "5")
    enumerate_dn(5)
    with pytest.raises(ResourceLimitError):
        enumerate_dn(6)


@pytest.mark.parametrize("n", range(0, 13))
def test_carleson_of_full_layers(n):
    assert carleson_constant(enumerate_dn(n)) == n + 1


def test_carleson_small_cases():
    assert carleson_constant([ROOT]) == 1
    chain = IntervalFamily.from_literals(["0:1", "1:1", "2:1", "3:1"])
    assert carleson_constant(chain) == Fraction(15, 8)
    antichain = IntervalFamily.from_literals(["2:1", "2:2", "2:3", "2:4"])
    assert carleson_constant(antichain) == 1
    with pytest.raises(DomainError):
        carleson_constant([])


@given(families())
def test_carleson_matches_brute_force(fam):
    value = carleson_constant(fam)
    assert value == carleson_brute_force(fam)
    assert 1 <= value <= max(I.level for I in fam) + 1


@given(families(), st.integers(2, 5), st.randoms(use_true_random=False))
def test_pigeonhole_lower_bound(fam, L, rnd):
    members = list(fam)
    L = min(L, len(members))
    rnd.shuffle(members)
    parts = [members[i::L] for i in range(L)]
    choice = partition_pigeonhole(fam, parts)
    assert choice.constants[choice.index] == max(choice.constants)
    assert choice.constants[choice.index] >= choice.whole / L


def test_pigeonhole_rejects_bad_partitions():
    fam = enumerate_dn(1)
    a, b, c = fam.members
    with pytest.raises(DomainError):
        partition_pigeonhole(fam, [[a, b], [b, c]])
    with pytest.raises(DomainError):
        partition_pigeonhole(fam, [[a], [b]])


def test_point_set_predicates():
    left, right = ROOT.halves()
    assert set_contains([ROOT], [left, right])
    assert set_contains([left, right], [ROOT])
    assert not set_contains([left], [ROOT])
    assert sets_disjoint([left], [right]) and not sets_disjoint([ROOT], [right])


def _haar_tree(depth):
    return {from_canonical(j): (from_canonical(j),) for j in range(1, 1 << (depth + 1))}


def test_tree_of_sets_haar_tree():
    tree = DyadicTreeOfSets(3, _haar_tree(3), gg_tree=True)
    assert tree.check().ok
    assert tree.measure_bound_violations() == []
    assert carleson_constant(tree) == 4 == carleson_brute_force(tree)


def test_tree_of_sets_detects_overlap():
    sets = _haar_tree(1)
    sets[DyadicInterval(1, 2)] = (DyadicInterval(1, 1),)
    check = is_dyadic_tree(sets, 1)
    assert not check.ok and check.parent == ROOT
    with pytest.raises(DomainError):
        DyadicTreeOfSets(1, {**sets, ROOT: ()}, gg_tree=True)     # empty root set


def test_tree_of_sets_requires_every_node():
    with pytest.raises(DomainError):
        DyadicTreeOfSets(2, _haar_tree(1))
