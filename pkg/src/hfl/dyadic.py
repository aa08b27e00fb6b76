"""Exact combinatorics of dyadic intervals, interval families and trees of sets.

Every measure in this module is an exact dyadic rational (``fractions.Fraction``);
no floating point enters a combinatorial predicate.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, NamedTuple, Sequence

from .config import max_level
from .errors import DomainError, ResourceLimitError


@dataclass(frozen=True, order=True)
class DyadicInterval:
    """The half-open interval [(k-1) 2^-level, k 2^-level) with 1 <= k <= 2^level."""

    level: int
    index: int

    def __post_init__(self):
        if self.level < 0:
            raise DomainError(f"negative level {self.level}")
        if not 1 <= self.index <= (1 << self.level):
            raise DomainError(f"index {self.index} out of range for level {self.level}")

    @property
    def measure(self) -> Fraction:
        return Fraction(1, 1 << self.level)

    @property
    def left(self) -> Fraction:
        return Fraction(self.index - 1, 1 << self.level)

    @property
    def right(self) -> Fraction:
        return Fraction(self.index, 1 << self.level)

    def halves(self) -> tuple["DyadicInterval", "DyadicInterval"]:
        return (DyadicInterval(self.level + 1, 2 * self.index - 1),
                DyadicInterval(self.level + 1, 2 * self.index))

    @property
    def parent(self) -> "DyadicInterval | None":
        if self.level == 0:
            return None
        return DyadicInterval(self.level - 1, (self.index + 1) // 2)

    def ancestor(self, level: int) -> "DyadicInterval":
        if level > self.level:
            raise DomainError("ancestor level below interval level")
        shift = self.level - level
        return DyadicInterval(level, ((self.index - 1) >> shift) + 1)

    def contains(self, other: "DyadicInterval") -> bool:
        return other.level >= self.level and other.ancestor(self.level) == self

    def is_left_half(self) -> bool:
        return self.level > 0 and self.index % 2 == 1

    def cell_range(self, resolution: int) -> tuple[int, int]:
        """Indices [a, b) of the grid cells of width 2^-resolution covering the interval."""
        if resolution < self.level:
            raise DomainError(f"resolution {resolution} coarser than level {self.level}")
        width = 1 << (resolution - self.level)
        a = (self.index - 1) * width
        return a, a + width

    def subintervals(self, depth: int) -> list["DyadicInterval"]:
        """Dyadic subintervals J of self with |J| = 2^-depth |self|, left to right."""
        base = (self.index - 1) << depth
        lvl = self.level + depth
        return [DyadicInterval(lvl, base + t + 1) for t in range(1 << depth)]

    @property
    def literal(self) -> str:
        return f"{self.level}:{self.index}"

    @classmethod
    def parse(cls, text: str) -> "DyadicInterval":
        try:
            level, index = text.split(":")
            return cls(int(level), int(index))
        except ValueError as exc:
            raise DomainError(f"bad interval literal {text!r}") from exc

    def __repr__(self):
        return f"I({self.literal})"


ROOT = DyadicInterval(0, 1)


def canonical_index(interval: DyadicInterval) -> int:
    """Breadth-first label j = 2^level + k - 1; children of j are 2j and 2j + 1."""
    return (1 << interval.level) + interval.index - 1


def from_canonical(j: int) -> DyadicInterval:
    if j < 1:
        raise DomainError(f"canonical index must be >= 1, got {j}")
    level = j.bit_length() - 1
    return DyadicInterval(level, j - (1 << level) + 1)


def check_level(n: int) -> None:
    limit = max_level()
    if n > limit:
        raise ResourceLimitError(f"level {n} exceeds MAX_LEVEL={limit}")


def enumerate_dn(n: int) -> "IntervalFamily":
    """All dyadic intervals of length >= 2^-n, in canonical order."""
    if n < 0:
        raise DomainError("n must be nonnegative")
    check_level(n)
    members = [from_canonical(j) for j in range(1, 1 << (n + 1))]
    return IntervalFamily(members, max_level=n)


class IntervalFamily:
    """A finite duplicate-free set of dyadic intervals."""

    __slots__ = ("_members", "max_level", "disjoint")

    def __init__(self, members: Iterable[DyadicInterval], max_level: int | None = None,
                 disjoint: bool = False):
        members = tuple(members)
        unique = frozenset(members)
        if len(unique) != len(members):
            raise DomainError("interval family contains duplicates")
        self._members = tuple(sorted(unique, key=canonical_index))
        deepest = max((I.level for I in self._members), default=0)
        if max_level is None:
            max_level = deepest
        elif deepest > max_level:
            raise DomainError(f"member at level {deepest} exceeds max_level {max_level}")
        self.max_level = max_level
        self.disjoint = disjoint
        if disjoint and not pairwise_disjoint(self._members):
            raise DomainError("family flagged disjoint has overlapping members")

    @property
    def members(self) -> tuple[DyadicInterval, ...]:
        return self._members

    def __iter__(self):
        return iter(self._members)

    def __len__(self):
        return len(self._members)

    def __contains__(self, item):
        return item in set(self._members)

    def __eq__(self, other):
        return isinstance(other, IntervalFamily) and set(self._members) == set(other._members)

    def __hash__(self):
        return hash(frozenset(self._members))

    def __repr__(self):
        return f"IntervalFamily({[I.literal for I in self._members]})"

    def measure(self) -> Fraction:
        """Measure of the point-set union."""
        return union_measure(self._members)

    def literals(self) -> list[str]:
        return [I.literal for I in self._members]

    @classmethod
    def from_literals(cls, literals: Iterable[str], **kwargs) -> "IntervalFamily":
        return cls((DyadicInterval.parse(s) for s in literals), **kwargs)


# -- point sets given as finite unions of dyadic intervals -------------------

def _ranges(intervals: Iterable[DyadicInterval], resolution: int) -> list[tuple[int, int]]:
    spans = sorted(I.cell_range(resolution) for I in intervals)
    merged: list[tuple[int, int]] = []
    for a, b in spans:
        if merged and a <= merged[-1][1]:
            if b > merged[-1][1]:
                merged[-1] = (merged[-1][0], b)
        else:
            merged.append((a, b))
    return merged


def _resolution(*groups: Iterable[DyadicInterval]) -> int:
    return max((I.level for g in groups for I in g), default=0)


def union_measure(intervals: Iterable[DyadicInterval]) -> Fraction:
    intervals = list(intervals)
    res = _resolution(intervals)
    return Fraction(sum(b - a for a, b in _ranges(intervals, res)), 1 << res)


def pairwise_disjoint(intervals: Sequence[DyadicInterval]) -> bool:
    res = _resolution(intervals)
    spans = sorted(I.cell_range(res) for I in intervals)
    return all(spans[t][1] <= spans[t + 1][0] for t in range(len(spans) - 1))


def set_contains(outer: Sequence[DyadicInterval], inner: Sequence[DyadicInterval]) -> bool:
    """Point-set inclusion of unions: inner ⊆ outer."""
    res = _resolution(outer, inner)
    big = _ranges(outer, res)
    starts = [a for a, _ in big]
    for a, b in _ranges(inner, res):
        t = bisect.bisect_right(starts, a) - 1
        if t < 0 or big[t][1] < b:
            return False
    return True


def sets_disjoint(first: Sequence[DyadicInterval], second: Sequence[DyadicInterval]) -> bool:
    res = _resolution(first, second)
    spans = sorted(_ranges(first, res) + _ranges(second, res))
    return all(spans[t][1] <= spans[t + 1][0] for t in range(len(spans) - 1))


# -- trees of sets ------------------------------------------------------------

class TreeCheck(NamedTuple):
    ok: bool
    parent: DyadicInterval | None = None
    reason: str = ""


@dataclass(frozen=True)
class DyadicTreeOfSets:
    """Assignment I -> E_I (a union of disjoint dyadic intervals) for I in D_m."""

    depth: int
    sets: Mapping[DyadicInterval, tuple[DyadicInterval, ...]]
    gg_tree: bool = False
    _measures: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        expected = {from_canonical(j) for j in range(1, 1 << (self.depth + 1))}
        if set(self.sets) != expected:
            raise DomainError("tree of sets must assign a set to every I in D_m")
        for I, parts in self.sets.items():
            if not pairwise_disjoint(parts):
                raise DomainError(f"E_{I.literal} is not a union of disjoint intervals")
        if self.gg_tree:
            bad = self.measure_bound_violations()
            if bad:
                raise DomainError(f"measure bounds violated at {bad[0].literal}")

    def measure(self, I: DyadicInterval) -> Fraction:
        if I not in self._measures:
            self._measures[I] = union_measure(self.sets[I])
        return self._measures[I]

    def normalized_measure(self, I: DyadicInterval) -> Fraction:
        root = self.measure(ROOT)
        if root == 0:
            raise DomainError("root set is empty")
        return self.measure(I) / root

    def measure_bound_violations(self, normalized: bool = True) -> list[DyadicInterval]:
        """Nodes breaking |I|/2 <= |E_I| (/|E_root|) <= |I|."""
        out = []
        for I in sorted(self.sets, key=canonical_index):
            value = self.normalized_measure(I) if normalized else self.measure(I)
            if not (I.measure / 2 <= value <= I.measure):
                out.append(I)
        return out

    def check(self) -> TreeCheck:
        return is_dyadic_tree(self.sets, self.depth)


def is_dyadic_tree(assignment: Mapping[DyadicInterval, Sequence[DyadicInterval]],
                   depth: int) -> TreeCheck:
    """Nesting and disjointness of children for every parent in D_{m-1}."""
    for j in range(1, 1 << depth):
        I = from_canonical(j)
        left, right = I.halves()
        parent_set = assignment[I]
        if not set_contains(parent_set, assignment[left]):
            return TreeCheck(False, I, f"E_{left.literal} escapes E_{I.literal}")
        if not set_contains(parent_set, assignment[right]):
            return TreeCheck(False, I, f"E_{right.literal} escapes E_{I.literal}")
        if not sets_disjoint(assignment[left], assignment[right]):
            return TreeCheck(False, I, f"children of {I.literal} overlap")
    return TreeCheck(True)


# -- Carleson constants -------------------------------------------------------

def _family_members(family) -> tuple[DyadicInterval, ...]:
    members = tuple(family)
    if not members:
        raise DomainError("Carleson constant of an empty family is undefined")
    return members


def carleson_constant(family) -> Fraction:
    """sup over members I of (1/|I|) * sum of |J| over members J ⊆ I.

    Interval families are handled by a single upward sweep over ancestors;
    trees of sets by pairwise point-set inclusion of the E_I.
    """
    if isinstance(family, DyadicTreeOfSets):
        return _tree_carleson(family)
    members = _family_members(family)
    present = set(members)
    top = max(I.level for I in members)
    mass = {I: 0 for I in members}
    for J in members:
        weight = 1 << (top - J.level)
        node = J
        while node is not None:
            if node in present:
                mass[node] += weight
            node = node.parent
    return max(Fraction(mass[I], 1 << (top - I.level)) for I in members)


def carleson_brute_force(family) -> Fraction:
    """Double loop over all pairs; independent check of ``carleson_constant``."""
    if isinstance(family, DyadicTreeOfSets):
        sets = [(family.measure(I), family.sets[I]) for I in family.sets]
        best = None
        for mi, Ei in sets:
            if mi == 0:
                continue
            total = sum((mj for mj, Ej in sets if set_contains(Ei, Ej)), Fraction(0))
            value = total / mi
            best = value if best is None or value > best else best
        if best is None:
            raise DomainError("all sets in the tree are empty")
        return best
    members = _family_members(family)
    top = max(I.level for I in members)
    # endpoints and lengths as integers on the grid of width 2^-top
    ends = [((I.index - 1) << (top - I.level), I.index << (top - I.level)) for I in members]
    best = Fraction(0)
    for lo, hi in ends:
        total = sum(b - a for a, b in ends if lo <= a and b <= hi)
        best = max(best, Fraction(total, hi - lo))
    return best


def _tree_carleson(tree: DyadicTreeOfSets) -> Fraction:
    nodes = sorted(tree.sets, key=canonical_index)
    nonempty = [I for I in nodes if tree.measure(I) > 0]
    if not nonempty:
        raise DomainError("all sets in the tree are empty")
    best = Fraction(0)
    for I in nonempty:
        EI = tree.sets[I]
        mI = tree.measure(I)
        # descendants are contained whenever the tree property holds; others are
        # tested explicitly because sets may coincide or be empty
        total = Fraction(0)
        for J in nodes:
            mJ = tree.measure(J)
            if mJ == 0 or set_contains(EI, tree.sets[J]):
                total += mJ
        best = max(best, total / mI)
    return best


class PigeonholeChoice(NamedTuple):
    index: int
    constants: tuple[Fraction, ...]
    whole: Fraction


def partition_pigeonhole(family, parts: Sequence) -> PigeonholeChoice:
    """Index of the part with the largest Carleson constant (first on ties).

    Since the constant is subadditive over a partition, the winner always has
    at least ``whole / len(parts)``.
    """
    members = set(_family_members(family))
    seen: set = set()
    for part in parts:
        part = set(part)
        if not part:
            raise DomainError("partition has an empty part")
        if part & seen:
            raise DomainError("parts overlap")
        seen |= part
    if seen != members:
        raise DomainError("parts do not cover the family")
    constants = tuple(carleson_constant(list(p)) for p in parts)
    best = max(range(len(parts)), key=lambda t: (constants[t], -t))
    return PigeonholeChoice(best, constants, carleson_constant(list(members)))
