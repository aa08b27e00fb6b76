"""Sparse-level selection and the operator-adapted block basis construction.

``select_sparse_level`` finds a level below an interval I at which the Haar
coefficients of a pair (x, y) are mostly below |J|/k. ``build_block_basis``
runs the inductive good-interval construction: nodes are built in canonical
(breadth-first) order, node c lies inside the +1 set (c even) or -1 set
(c odd) of its parent c // 2, and every interval taken for node c has small
interaction g(J) with all previously built functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np

from .dyadic import (DyadicInterval, DyadicTreeOfSets, IntervalFamily, canonical_index,
                     from_canonical, is_dyadic_tree, pairwise_disjoint, set_contains,
                     union_measure)
from .errors import DomainError, InsufficientDepth, PreconditionError
from .haar import (NormConstants, StepFunction, dimension, haar_coefficients,
                   lp_norm, position, synthesize_vector)
from .operators import HaarOperator, opnorm, upper_bound


# -- sparse level selection ----------------------------------------------------

@dataclass(frozen=True)
class ThinningParams:
    k: int
    ell: int
    p: float

    def __post_init__(self):
        if self.k < 1 or self.ell < 1:
            raise DomainError("k and ell must be positive integers")
        NormConstants(self.p)

    @property
    def A_p(self) -> float:
        const = NormConstants(self.p)
        return (self.k ** 2 * self.ell ** 2) * (const.C_p + const.C_q) + 1


class SparseLevel(NamedTuple):
    level: int                 # j, relative to I
    bad: IntervalFamily        # B_j
    search_bound: int          # floor(A_p)
    bad_counts: tuple          # |B_j'| for every level j' examined


def bad_mask(x_coeffs: np.ndarray, y_coeffs: np.ndarray, level: int, k: int) -> np.ndarray:
    """|<x,h_J>| + |<y,h_J>| > |J|/k, i.e. |c_J(x)| + |c_J(y)| > 1/k."""
    return np.abs(x_coeffs) + np.abs(y_coeffs) > 1.0 / k


def select_sparse_level(x: StepFunction, y: StepFunction, I: DyadicInterval,
                        params: ThinningParams, depth: int | None = None) -> SparseLevel:
    """Minimal j in [1, min(A_p, depth)] with sum_{J in B_j} |J| <= |I| / ell."""
    const = NormConstants(params.p)
    tol = 1 + 1e-12
    if lp_norm(x, params.p) > float(I.measure) ** (1 / params.p) * tol:
        raise PreconditionError("||x||_p exceeds |I|^(1/p)")
    if lp_norm(y, const.q) > float(I.measure) ** (1 / const.q) * tol:
        raise PreconditionError("||y||_q exceeds |I|^(1/q)")
    R = max(x.resolution, y.resolution, I.level + 1)
    available = R - 1 - I.level
    if depth is not None:
        available = min(available, depth)
    bound = math.floor(params.A_p)
    limit = min(bound, available)
    N = I.level + limit
    cx = haar_coefficients(x, N) if limit > 0 else None
    cy = haar_coefficients(y, N) if limit > 0 else None
    counts = []
    for j in range(1, limit + 1):
        level = I.level + j
        base = (1 << level) - 1 + ((I.index - 1) << j)
        sl = slice(base, base + (1 << j))
        mask = bad_mask(cx[sl], cy[sl], level, params.k)
        count = int(mask.sum())
        counts.append(count)
        if count * params.ell <= (1 << j):
            subs = I.subintervals(j)
            bad = IntervalFamily([subs[t] for t in np.flatnonzero(mask)], disjoint=True)
            return SparseLevel(j, bad, bound, tuple(counts))
    raise InsufficientDepth(
        f"no sparse level within {limit} levels below {I.literal} (A_p bound {bound})",
        diagnostics={"deepest_level": limit, "bad_counts": counts, "search_bound": bound})


# -- good intervals ------------------------------------------------------------

class Interaction:
    """Running sum over built functions b_j of |c(H b_j)| + |c(H* b_j)|.

    g(J) = |J| * total[J] since <F, h_J> = c_J(F) |J|.
    """

    def __init__(self, H: HaarOperator):
        self.H = H
        self.Hstar = H.adjoint()
        self.total = np.zeros(H.dim)
        self.images: list[np.ndarray] = []

    def add(self, b: np.ndarray) -> None:
        Hb = self.H.matvec(b)
        self.images.append(Hb)
        self.total += np.abs(Hb) + np.abs(self.Hstar.matvec(b))


class GoodIntervalReport(NamedTuple):
    stage: int
    node: int
    threshold: float
    level: int | None            # selected relative level mu
    retained: float              # measure ratio kept at mu
    required: float              # 1 - 8^-stage
    candidates: int
    good: int
    g_values: dict               # literal -> g(J) at the selected level (small runs only)
    bound_mu: float              # the worst-case bound 2^((C_p+C_q)^2 (i+1)), reported only

    def to_json(self) -> dict:
        d = self._asdict()
        d["bound_mu"] = self.bound_mu if math.isfinite(self.bound_mu) else "inf"
        return d


def good_intervals(H: HaarOperator, built: Sequence[np.ndarray],
                   candidates: Sequence[DyadicInterval], stage: int,
                   safety: float = 1.0) -> tuple[list[DyadicInterval], dict]:
    """Split candidates by g(J) <= safety * |J| 4^(-stage-1); returns (good, g-values)."""
    inter = Interaction(H)
    for b in built:
        inter.add(b)
    good, g = [], {}
    threshold = safety * 4.0 ** (-stage - 1)
    for J in candidates:
        if J.level > H.N:
            raise DomainError(f"candidate {J.literal} is finer than level N={H.N}")
        value = float(J.measure) * inter.total[position(J)]
        g[J] = value
        if inter.total[position(J)] <= threshold:
            good.append(J)
    return good, g


# -- block bases -----------------------------------------------------------------

@dataclass
class BlockBasis:
    """Collections E_I (I in D_m) of disjoint intervals in D_N; b_I = sum of h_J."""

    m: int
    N: int
    collections: dict            # DyadicInterval -> tuple[DyadicInterval, ...]
    reports: list = field(default_factory=list)

    def nodes(self) -> list[DyadicInterval]:
        return sorted(self.collections, key=canonical_index)

    def vector(self, I: DyadicInterval) -> np.ndarray:
        out = np.zeros(dimension(self.N))
        for J in self.collections[I]:
            out[position(J)] = 1.0
        return out

    def vectors(self) -> np.ndarray:
        """Columns b_I in canonical order."""
        return np.stack([self.vector(I) for I in self.nodes()], axis=1)

    def measure(self, I: DyadicInterval) -> Fraction:
        return union_measure(self.collections[I])

    def tree(self) -> DyadicTreeOfSets:
        return DyadicTreeOfSets(self.m, {I: tuple(v) for I, v in self.collections.items()})

    def to_json(self) -> dict:
        return {"m": self.m, "N": self.N,
                "nodes": [{"node": I.literal, "index": canonical_index(I),
                           "intervals": [J.literal for J in sorted(self.collections[I])]}
                          for I in self.nodes()]}

    @classmethod
    def from_json(cls, data: dict) -> "BlockBasis":
        collections = {DyadicInterval.parse(n["node"]):
                       tuple(DyadicInterval.parse(s) for s in n["intervals"])
                       for n in data["nodes"]}
        return cls(int(data["m"]), int(data["N"]), collections)


def _candidate_positions(level: int, ks: np.ndarray, side: int, mu: int) -> np.ndarray:
    """Positions of the level+mu subintervals inside the left (0) / right (1) halves."""
    width = 1 << (mu - 1)
    starts = (2 * ks + side) * width
    idx = starts[:, None] + np.arange(width)[None, :]
    return ((1 << (level + mu)) - 1 + idx).ravel()


def build_block_basis(H: HaarOperator, m: int, p: float = 2.0, *, N: int | None = None,
                      safety: float = 0.5, norm_tolerance: float = 1e-6,
                      check_norm: bool = True, keep_g_values: int = 64) -> BlockBasis:
    """Inductive good-interval construction for nodes 1 .. 2^(m+1) - 1.

    At stage i (building node c = i + 1) the admissible intervals are the
    dyadic subintervals J, at one common relative level mu, of the parent's
    half intervals, with g(J) <= safety * |J| 4^-c. The smallest mu keeping at
    least (1 - 8^-i) of the available measure wins. ``safety`` = 1 is the
    bare threshold; the default 1/2 makes the two-sided off-diagonal estimate
    hold for every node, not only against earlier ones.
    """
    N = H.N if N is None else N
    if N != H.N:
        raise DomainError(f"operator lives on level {H.N}, not {N}")
    if m < 0 or N < m:
        raise PreconditionError(f"need 0 <= m <= N, got m={m}, N={N}")
    const = NormConstants(p)
    if check_norm:
        cheap = upper_bound(H, p)
        est = None if cheap <= 1 + norm_tolerance else opnorm(H, p)
        if est is not None and est.upper_bound > 1 + norm_tolerance:
            raise PreconditionError(
                f"||H||_p upper bound {est.upper_bound:.6g} exceeds 1 + {norm_tolerance}")
    inter = Interaction(H)
    # node -> (level of its intervals, 0-based indices)
    built: dict[int, tuple[int, np.ndarray]] = {1: (0, np.array([0]))}
    b1 = np.zeros(H.dim)
    b1[0] = 1.0
    inter.add(b1)
    reports: list[GoodIntervalReport] = []
    last = (1 << (m + 1)) - 1

    def partial():
        return _basis_from_nodes(m, N, built, reports)

    for c in range(2, last + 1):
        stage = c - 1
        parent_level, parent_ks = built[c // 2]
        side = 0 if c % 2 == 0 else 1
        threshold = safety * 4.0 ** (-c)
        eight = 8 ** stage
        bound_mu = _mu_bound(const, stage)
        chosen = None
        best_ratio = 0.0
        for mu in range(1, N - parent_level + 1):
            pos = _candidate_positions(parent_level, parent_ks, side, mu)
            good_mask = inter.total[pos] <= threshold
            good = int(good_mask.sum())
            # kept measure: good * 2^-(L+mu) against |E_parent| / 2 = len * 2^-(L+1)
            available = len(parent_ks) << (mu - 1)
            ratio = good / available
            best_ratio = max(best_ratio, ratio)
            if good * eight >= (eight - 1) * available:
                chosen = (mu, pos, good_mask, ratio, len(pos), good)
                break
        if chosen is None:
            reports.append(GoodIntervalReport(stage, c, threshold, None, best_ratio,
                                              1 - 8.0 ** -stage, 0, 0, {}, bound_mu))
            raise InsufficientDepth(
                f"stage {stage}: no level below {parent_level} keeps 1 - 8^-{stage} of the "
                f"measure within N={N}",
                partial=partial(),
                diagnostics={"stage": stage, "node": c, "best_retained": best_ratio,
                             "deepest_level": N})
        mu, pos, good_mask, ratio, ncand, ngood = chosen
        level = parent_level + mu
        selected = pos[good_mask]
        ks = selected - ((1 << level) - 1)
        built[c] = (level, ks)
        g_values = {}
        if len(pos) <= keep_g_values:
            w = 2.0 ** -level
            g_values = {f"{level}:{int(q - ((1 << level) - 1)) + 1}": float(w * inter.total[q])
                        for q in pos}
        reports.append(GoodIntervalReport(stage, c, threshold, mu, ratio, 1 - 8.0 ** -stage,
                                          ncand, ngood, g_values, bound_mu))
        b = np.zeros(H.dim)
        b[selected] = 1.0
        inter.add(b)
    return partial()


def _mu_bound(const: NormConstants, stage: int) -> float:
    exponent = (const.C_p + const.C_q) ** 2 * (stage + 1)
    return math.inf if exponent > 1000 else 2.0 ** exponent


def _basis_from_nodes(m, N, built, reports) -> BlockBasis:
    collections = {}
    for c, (level, ks) in built.items():
        collections[from_canonical(c)] = tuple(DyadicInterval(level, int(k) + 1)
                                               for k in np.sort(ks))
    return BlockBasis(m, N, collections, list(reports))


# -- independent verification ------------------------------------------------------

def _cell_values(intervals, R) -> np.ndarray:
    """Cell values of sum h_J over the given intervals, built directly on the grid."""
    values = np.zeros(1 << R)
    for J in intervals:
        a, b = J.cell_range(R)
        mid = (a + b) // 2
        values[a:mid] += 1.0
        values[mid:b] -= 1.0
    return values


def offdiagonal_forms(B: BlockBasis, H: HaarOperator) -> np.ndarray:
    """F[I, J] = <H b_J, b_I> by cell quadrature of step functions."""
    R = B.N + 1
    nodes = B.nodes()
    cells = np.stack([_cell_values(B.collections[I], R) for I in nodes], axis=1)
    coeffs = np.stack([B.vector(I) for I in nodes], axis=1)
    images = synthesize_vector(H.matvec(coeffs), H.N, R)
    return (cells.T @ images) / (1 << R)


def verify_block_basis(B: BlockBasis, H: HaarOperator) -> dict:
    """Recompute the four structural properties and the off-diagonal table."""
    nodes = B.nodes()
    all_intervals = [J for I in nodes for J in B.collections[I]]
    distinct = len(all_intervals) == len(set(all_intervals))
    inner_disjoint = all(pairwise_disjoint(B.collections[I]) for I in nodes)
    tree_check = is_dyadic_tree(B.collections, B.m)
    measures = {I: union_measure(B.collections[I]) for I in nodes}
    root = measures[from_canonical(1)]
    raw_bounds = all(I.measure / 2 <= measures[I] <= I.measure for I in nodes)
    normalized = root > 0 and all(I.measure / 2 <= measures[I] / root <= I.measure
                                  for I in nodes)
    sign_ok = True
    for I in nodes:
        if I.level >= B.m:
            continue
        left, right = I.halves()
        plus = [J.halves()[0] for J in B.collections[I]]
        minus = [J.halves()[1] for J in B.collections[I]]
        if not (set_contains(plus, B.collections[left])
                and set_contains(minus, B.collections[right])):
            sign_ok = False
    R = B.N + 1
    norms_ok = all(float(np.sum(_cell_values(B.collections[I], R) ** 2)) / (1 << R)
                   == float(measures[I]) for I in nodes)
    F = offdiagonal_forms(B, H)
    rows = []
    chain_ok = power_ok = True
    for a, I in enumerate(nodes):
        off = float(np.sum(np.abs(F[a])) - abs(F[a, a]))
        c = canonical_index(I)
        chain = float(measures[I]) * 4.0 ** (-c)
        power = float(I.measure) ** 4
        chain_ok &= off <= chain
        power_ok &= off <= power
        rows.append({"node": I.literal, "index": c, "offdiag_sum": off,
                     "chain_bound": chain, "power_bound": power,
                     "diagonal": float(F[a, a]), "norm2_sq": float(measures[I])})
    return {
        "disjoint_collections": bool(distinct and inner_disjoint),
        "tree": bool(tree_check.ok),
        "tree_violation": None if tree_check.ok else tree_check.reason,
        "measure_bounds": bool(raw_bounds),
        "measure_bounds_normalized": bool(normalized),
        "sign_nesting": bool(sign_ok),
        "norm_identity": bool(norms_ok),
        "almost_orthogonal": bool(chain_ok),
        "almost_orthogonal_power_form": bool(power_ok),
        "offdiagonal": rows,
        "all_ok": bool(distinct and inner_disjoint and tree_check.ok and raw_bounds
                       and sign_ok and norms_ok and chain_ok),
    }


def random_admissible_pair(I: DyadicInterval, depth: int, p: float, seed: int):
    """Random (x, y) supported on I at resolution I.level + depth + 1 with
    ||x||_p <= |I|^(1/p) and ||y||_q <= |I|^(1/q)."""
    const = NormConstants(p)
    rng = np.random.default_rng(seed)
    R = I.level + depth + 1
    a, b = I.cell_range(R)
    out = []
    for r in (p, const.q):
        values = np.zeros(1 << R)
        values[a:b] = rng.standard_normal(b - a) * rng.exponential(1.0, b - a) ** 2
        norm = lp_norm(StepFunction(R, values), r)
        if norm > 0:
            values *= rng.uniform(0.05, 1.0) * float(I.measure) ** (1 / r) / norm
        out.append(StepFunction(R, values))
    return out[0], out[1]
