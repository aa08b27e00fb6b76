"""Factoring the identity of L^p_n through H = T or H = Id - T.

Pipeline: block basis adapted to T, diagonal split into the intervals where
|<T b_I, b_I>| >= ||b_I||^2 / 2 and the rest, condensation of the larger
family to a depth-n Haar-like tree, then E (embedding), P (projection) and a
direct solve that makes P H E = Id exact up to rounding.

All L^p_n / L^p_N spaces here are the mean-zero parts spanned by the Haar
functions; vectors are coefficient vectors in the usual canonical layout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np

from . import __version__
from .dyadic import DyadicInterval, IntervalFamily, canonical_index, carleson_constant, from_canonical
from .errors import (DomainError, InsufficientCarleson, InsufficientDepth, NeumannBoundViolated,
                     PreconditionError)
from .haar import (NormConstants, dimension, interval_weights,
                   synthesize_vector)
from .operators import HaarOperator, riesz_thorin, weighted_lp_norm_bounds
from .selection import BlockBasis, build_block_basis


def family_carleson(members) -> Fraction:
    """Carleson constant of an index family; 0 for the empty family."""
    members = tuple(members)
    return carleson_constant(IntervalFamily(members)) if members else Fraction(0)


# -- diagonal split ---------------------------------------------------------------

class DiagonalSplit(NamedTuple):
    diagonal: dict           # I -> <T b_I, b_I>
    norms: dict              # I -> ||b_I||_2^2 = |E_I|
    L: tuple
    R: tuple
    carleson_L: Fraction
    carleson_R: Fraction
    branch: str              # "T" or "Id-T"

    def to_json(self) -> dict:
        return {"L": [I.literal for I in self.L], "R": [I.literal for I in self.R],
                "carleson_L": float(self.carleson_L), "carleson_R": float(self.carleson_R),
                "carleson_L_exact": str(self.carleson_L),
                "carleson_R_exact": str(self.carleson_R), "branch": self.branch}


def _diagonals(T: HaarOperator, B: BlockBasis):
    nodes = B.nodes()
    V = B.vectors()
    w = T.weights
    diag = np.sum(V * T.matvec(V) * w[:, None], axis=0)
    norms = np.sum(V * V * w[:, None], axis=0)
    return nodes, diag, norms


def large_diagonal(nodes, diag, norms) -> tuple:
    """Nodes with |<H b_I, b_I>| >= ||b_I||^2 / 2 (ties count in)."""
    return tuple(I for I, d, s in zip(nodes, diag, norms) if abs(d) >= s / 2)


def diagonal_split(T: HaarOperator, B: BlockBasis) -> DiagonalSplit:
    nodes, diag, norms = _diagonals(T, B)
    L = large_diagonal(nodes, diag, norms)
    in_L = set(L)
    R = tuple(I for I in nodes if I not in in_L)
    cL, cR = family_carleson(L), family_carleson(R)
    return DiagonalSplit({I: float(d) for I, d in zip(nodes, diag)},
                         {I: float(s) for I, s in zip(nodes, norms)},
                         L, R, cL, cR, "T" if cL >= cR else "Id-T")


def branch_operator(T: HaarOperator, branch: str) -> HaarOperator:
    if branch == "T":
        return T
    if branch == "Id-T":
        return T.complement()
    raise DomainError(f"unknown branch {branch!r}")


# -- condensation -----------------------------------------------------------------

def _maximal(family: Sequence[DyadicInterval]) -> list[DyadicInterval]:
    present = set(family)
    out = []
    for J in family:
        node = J.parent
        while node is not None and node not in present:
            node = node.parent
        if node is None:
            out.append(J)
    return sorted(out)


def _top_member(J: DyadicInterval, tops: set) -> DyadicInterval:
    node = J
    while node not in tops:
        node = node.parent
    return node


@dataclass
class CondensationSelection:
    """Assignment K in D_n -> B_K, a disjoint family of index intervals in L."""

    family: tuple
    n: int
    assignment: dict                       # K -> tuple of index intervals
    measures: dict = field(default_factory=dict)   # K -> |U_K| as Fraction
    root_candidate: DyadicInterval | None = None
    carleson: Fraction = Fraction(0)

    def nodes(self) -> list[DyadicInterval]:
        return sorted(self.assignment, key=canonical_index)

    def measure_bound_violations(self) -> list[str]:
        root = self.measures[from_canonical(1)]
        return [K.literal for K in self.nodes()
                if not (K.measure / 2 <= self.measures[K] / root <= K.measure)]

    def selection_matrix(self, basis_nodes: Sequence[DyadicInterval]) -> np.ndarray:
        """S[J, K] = 1 when index interval J belongs to B_K."""
        row = {I: a for a, I in enumerate(basis_nodes)}
        S = np.zeros((len(basis_nodes), dimension(self.n)))
        for b, K in enumerate(self.nodes()):
            for J in self.assignment[K]:
                S[row[J], b] = 1.0
        return S

    def to_json(self) -> dict:
        return {"n": self.n, "carleson": float(self.carleson),
                "root_candidate": None if self.root_candidate is None
                else self.root_candidate.literal,
                "nodes": [{"node": K.literal, "blocks": [J.literal for J in self.assignment[K]],
                           "measure": float(self.measures.get(K, 0))}
                          for K in self.nodes()],
                "measure_bound_violations": self.measure_bound_violations()}


def _condense_from(subfamily: list, n: int, B: BlockBasis | None):
    """Greedy top-down assignment; returns (assignment, reached depth)."""
    assigned = {from_canonical(1): subfamily}
    out = {}
    for j in range(1, 1 << (n + 1)):
        K = from_canonical(j)
        fam = assigned.pop(K)
        tops = _maximal(fam)
        if not tops:
            return out, K.level - 1
        out[K] = tuple(tops)
        if K.level == n:
            continue
        top_set = set(tops)
        plus, minus = [], []
        for J in fam:
            if J in top_set:
                continue
            M = _top_member(J, top_set)
            (plus if J.ancestor(M.level + 1) == M.halves()[0] else minus).append(J)
        left, right = K.halves()
        assigned[left], assigned[right] = plus, minus
    return out, n


def _block_measures(assignment: dict, B: BlockBasis | None) -> dict:
    if B is None:
        return {K: sum((J.measure for J in v), Fraction(0)) for K, v in assignment.items()}
    return {K: sum((B.measure(J) for J in v), Fraction(0)) for K, v in assignment.items()}


def condense(family, B: BlockBasis | None, n: int, p: float = 2.0, *,
             threshold: float | None = None, max_candidates: int = 64) -> CondensationSelection:
    """Extract a depth-n Haar-like tree of blocks from an index family.

    Node K receives the maximal intervals of its assigned subfamily; its
    children receive the remaining members inside the left / right halves of
    those maximal intervals. Roots tried: the whole family, then the members
    with the largest local Carleson mass. A candidate meeting the measure
    bounds |K|/2 <= |U_K|/|U_root| <= |K| is preferred. ``threshold`` gates on
    the Carleson constant first (n 2^n when None; pass 0 to skip).
    """
    if n < 0:
        raise DomainError("n must be nonnegative")
    NormConstants(p)
    members = sorted(set(family), key=canonical_index)
    carleson = family_carleson(members)
    gate = n * (1 << n) if threshold is None else threshold
    if carleson < gate:
        raise InsufficientCarleson(
            f"Carleson constant {float(carleson):.6g} below threshold {gate}",
            diagnostics={"carleson": float(carleson), "threshold": gate, "achieved_depth": None})
    candidates: list = [None]
    if members:
        present = set(members)
        top = max(I.level for I in members)
        mass = {I: 0 for I in members}
        for J in members:
            node = J
            while node is not None:
                if node in present:
                    mass[node] += 1 << (top - J.level)
                node = node.parent
        ranked = sorted(members, key=lambda I: (-Fraction(mass[I], 1 << (top - I.level)),
                                                canonical_index(I)))
        candidates += ranked[:max_candidates]
    best, best_bad, deepest = None, None, -1
    for root in candidates:
        sub = members if root is None else [J for J in members if root.contains(J)]
        assignment, depth = _condense_from(sub, n, B)
        deepest = max(deepest, depth)
        if depth < n:
            continue
        sel = CondensationSelection(tuple(members), n, assignment,
                                    _block_measures(assignment, B), root, carleson)
        bad = len(sel.measure_bound_violations())
        if best is None or bad < best_bad:
            best, best_bad = sel, bad
        if bad == 0:
            break
    if best is None:
        raise InsufficientCarleson(
            f"no depth-{n} condensation found (reached depth {deepest})",
            diagnostics={"carleson": float(carleson), "threshold": gate,
                         "achieved_depth": deepest})
    return best


# -- maps ----------------------------------------------------------------------

class BlockProjection:
    """f -> sum_J <f, b_J> b_J / <H b_J, b_J> over the family (coefficient space)."""

    def __init__(self, vectors: np.ndarray, diagonal: np.ndarray, weights: np.ndarray):
        self.vectors = vectors
        self.diagonal = np.asarray(diagonal, dtype=float)
        self.weights = weights

    def coordinates(self, c: np.ndarray) -> np.ndarray:
        """Coefficients of P(f) in the block basis."""
        pairings = self.vectors.T @ (self.weights[:, None] * c if c.ndim == 2 else self.weights * c)
        return pairings / (self.diagonal[:, None] if c.ndim == 2 else self.diagonal)

    def apply(self, c: np.ndarray) -> np.ndarray:
        return self.vectors @ self.coordinates(c)

    def norm2(self) -> float:
        """Exact L^2 norm: the b_J are orthogonal, so it is max ||b_J||^2 / |<H b_J, b_J>|."""
        if len(self.diagonal) == 0:
            return 0.0
        sq = np.sum(self.vectors ** 2 * self.weights[:, None], axis=0)
        return float(np.max(sq / np.abs(self.diagonal)))


def block_projection(H: HaarOperator, B: BlockBasis, family) -> BlockProjection:
    nodes = [I for I in B.nodes() if I in set(family)]
    V = np.stack([B.vector(I) for I in nodes], axis=1) if nodes else np.zeros((H.dim, 0))
    w = H.weights
    diag = np.sum(V * H.matvec(V) * w[:, None], axis=0) if nodes else np.zeros(0)
    norms = np.sum(V * V * w[:, None], axis=0)
    if np.any(np.abs(diag) < norms / 2):
        raise DomainError("a block has |<H b_J, b_J>| < ||b_J||^2 / 2; re-split first")
    return BlockProjection(V, diag, w)


def _embedding_scale(sel: CondensationSelection, p: float) -> float:
    return float(sel.measures[from_canonical(1)]) ** (-1.0 / p)


def embedding_matrix(B: BlockBasis, sel: CondensationSelection, p: float) -> np.ndarray:
    """E: h_K -> |U_root|^(-1/p) u_K with u_K = sum of b_J over B_K."""
    nodes = B.nodes()
    V = B.vectors()
    return (V @ sel.selection_matrix(nodes)) * _embedding_scale(sel, p)


def restriction_matrix(B: BlockBasis, sel: CondensationSelection, family, p: float) -> np.ndarray:
    """R on block coordinates over ``family``: b_J -> |U_root|^(1/p) (|E_J| / |U_K|) h_K.

    This is f -> sum_K <f, u_K> / ||u_K||^2 h_K restricted to the block span,
    so R E = Id exactly.
    """
    nodes = [I for I in B.nodes() if I in set(family)]
    S = sel.selection_matrix(nodes).T
    share = np.array([float(B.measure(J)) for J in nodes])
    totals = np.array([float(sel.measures[K]) for K in sel.nodes()])
    return S * share[None, :] / totals[:, None] / _embedding_scale(sel, p)


def build_projection_P(T: HaarOperator, B: BlockBasis, family, sel: CondensationSelection,
                       p: float = 2.0) -> np.ndarray:
    """R composed with the block projection, as a dim(n) x dim(N) matrix."""
    proj = block_projection(T, B, family)
    R = restriction_matrix(B, sel, family, p)
    return R @ (proj.vectors * proj.weights[:, None] / proj.diagonal[None, :]).T


# -- norms -----------------------------------------------------------------------

def weighted_spectral_norm(M: np.ndarray, N_in: int, N_out: int) -> float:
    """||M : L^2_{N_in} -> L^2_{N_out}|| for a coefficient matrix."""
    a = np.sqrt(interval_weights(N_out))[:, None] * M / np.sqrt(interval_weights(N_in))[None, :]
    return float(np.linalg.norm(a, 2)) if a.size else 0.0


def coefficient_matrix_lp_bound(M: np.ndarray, N_in: int, N_out: int, p: float) -> float:
    """Riesz-Thorin upper bound for a coefficient matrix acting between mean-zero L^p spaces.

    The cell matrix is Synth_out M Analysis_in; the analysis adjoint is
    applied as a synthesis of c / (|I| 2^R) so no dim(N) x 2^R matrix is formed.
    """
    R_in = N_in + 1
    left = (M / (interval_weights(N_in)[None, :] * (1 << R_in)))
    adj = synthesize_vector(left.T, N_in, R_in)            # 2^R_in x rows(M)
    cell = synthesize_vector(adj.T, N_out, N_out + 1)       # 2^R_out x 2^R_in
    w_in = np.full(1 << R_in, 2.0 ** -R_in)
    w_out = np.full(1 << (N_out + 1), 2.0 ** -(N_out + 1))
    n1, ninf = weighted_lp_norm_bounds(cell, w_in, w_out, p)
    return riesz_thorin(n1, ninf, p)


def operator_norm(M: np.ndarray, N_in: int, N_out: int, p: float) -> float:
    if p == 2.0:
        return weighted_spectral_norm(M, N_in, N_out)
    return coefficient_matrix_lp_bound(M, N_in, N_out, p)


# -- certificate ------------------------------------------------------------------

@dataclass
class FactorizationCertificate:
    p: float
    n: int
    m: int
    N: int
    mode: str                     # "conformant" | "best-effort"
    branch: str
    split: DiagonalSplit
    family: tuple                 # diagonal family used for the chosen branch
    selection: CondensationSelection
    E: np.ndarray                 # dim(N) x dim(n)
    P: np.ndarray                 # dim(n) x dim(N), corrected
    P_uncorrected: np.ndarray
    residual: float
    residual_uncorrected: float
    contraction: float            # ||D^1/2 (G - I) D^-1/2||_2 on the span of the blocks
    error_term: float             # max |G - I| entry
    neumann_ok: bool
    norm_E: float
    norm_P: float
    norm_P_uncorrected: float
    theory_conditions: dict
    diagnostics: dict = field(default_factory=dict)

    @property
    def outcome(self) -> str:
        return "ok" if self.neumann_ok else "non-conformant"

    @property
    def norm_product(self) -> float:
        return self.norm_E * self.norm_P

    def to_json(self, include_matrices: bool = True) -> dict:
        out = {
            "version": __version__, "p": self.p, "n": self.n, "m": self.m, "N": self.N,
            "mode": self.mode, "branch": self.branch,
            "carleson_L": float(self.split.carleson_L), "carleson_R": float(self.split.carleson_R),
            "split": self.split.to_json(),
            "family": [I.literal for I in self.family],
            "selection": self.selection.to_json(),
            "residual": self.residual, "residual_uncorrected": self.residual_uncorrected,
            "contraction": self.contraction, "error_term": self.error_term,
            "neumann_ok": self.neumann_ok,
            "norm_E": self.norm_E, "norm_P": self.norm_P,
            "norm_P_uncorrected": self.norm_P_uncorrected,
            "norm_product": self.norm_product,
            "norm_kind": "exact" if self.p == 2.0 else "riesz-thorin-upper",
            "theory_conditions": self.theory_conditions,
            "diagnostics": self.diagnostics,
        }
        if include_matrices:
            out["E"] = _sparse_columns(self.E)
            out["P"] = [[float(v) for v in row] for row in self.P]
        return out


def _sparse_columns(M: np.ndarray) -> list:
    return [{str(int(i)): float(M[i, j]) for i in np.flatnonzero(M[:, j])}
            for j in range(M.shape[1])]


def matrices_from_json(data: dict) -> tuple[np.ndarray, np.ndarray]:
    N, n = int(data["N"]), int(data["n"])
    E = np.zeros((dimension(N), dimension(n)))
    for j, col in enumerate(data["E"]):
        for i, v in col.items():
            E[int(i), j] = v
    return E, np.asarray(data["P"], dtype=float)


def factor_residual(E: np.ndarray, P: np.ndarray, H: HaarOperator, n: int) -> float:
    """||P H E - Id||_2 on L^2_n."""
    M = P @ H.matvec(E) - np.eye(E.shape[1])
    return weighted_spectral_norm(M, n, n)


def replay(data: dict, T: HaarOperator) -> float:
    """Recompute the stored residual from the stored E, P and the operator."""
    E, P = matrices_from_json(data)
    H = branch_operator(T, data["branch"])
    return factor_residual(E, P, H, int(data["n"]))


def default_m(n: int, p: float, mode: str) -> int:
    if mode == "conformant":
        return math.ceil(NormConstants(p).C_p * n * (1 << n))
    return max(n, 1)


def factor_identity(T: HaarOperator, n: int, N: int | None = None, p: float = 2.0, *,
                    m: int | None = None, mode: str = "best-effort",
                    threshold: float | None = None, safety: float = 0.5,
                    norm_tolerance: float = 1e-6, strict: bool = False,
                    basis: BlockBasis | None = None) -> FactorizationCertificate:
    """Build E, P with P H E = Id_{L^p_n}, H in {T, Id - T}.

    ``mode`` "conformant" uses m = ceil(C_p n 2^n) and the Carleson threshold
    n 2^n. "best-effort" without an explicit m tries m = max(n, 1), n + 1, ...
    until the condensation succeeds; a block basis that runs out of depth ends
    the search. The contraction ||PHg - g|| <= ||g|| / 2 on the block span is
    measured and reported; ``strict`` turns a violation into
    NeumannBoundViolated (the certificate rides along as ``partial``).
    """
    if mode not in ("conformant", "best-effort"):
        raise DomainError(f"unknown mode {mode!r}")
    N = T.N if N is None else N
    if N != T.N:
        raise DomainError(f"operator lives on level {T.N}, not {N}")
    if n < 0:
        raise DomainError("n must be nonnegative")
    if threshold is None:
        threshold = n * (1 << n) if mode == "conformant" else 0
    if basis is not None:
        m_values = [basis.m]
    elif m is not None:
        m_values = [m]
    elif mode == "conformant":
        need = default_m(n, p, mode)
        if need > N:
            raise InsufficientDepth(
                f"conformant mode needs m = ceil(C_p n 2^n) = {need} > N = {N}",
                diagnostics={"required_m": need, "N": N})
        m_values = [need]
    else:
        m_values = list(range(default_m(n, p, mode), N + 1))
    tried = []
    for k, m_try in enumerate(m_values):
        try:
            cert = _factor_at(T, n, N, p, m_try, mode, threshold, safety, norm_tolerance, basis)
        except InsufficientCarleson as exc:
            tried.append({"m": m_try, "outcome": exc.outcome, "reason": str(exc)})
            if k == len(m_values) - 1:
                exc.diagnostics["tried"] = tried
                raise
            continue
        cert.diagnostics["tried"] = tried
        break
    if strict and not cert.neumann_ok:
        raise NeumannBoundViolated(
            f"measured contraction {cert.contraction:.6g} exceeds 1/2", partial=cert,
            diagnostics={"contraction": cert.contraction})
    return cert


def _factor_at(T, n, N, p, m, mode, threshold, safety, norm_tolerance, basis):
    if not n <= m <= N:
        raise PreconditionError(f"need n <= m <= N, got n={n}, m={m}, N={N}")
    B = basis if basis is not None else build_block_basis(
        T, m, p, safety=safety, norm_tolerance=norm_tolerance)
    if B.m != m or B.N != N:
        raise DomainError("supplied block basis does not match m and N")
    split = diagonal_split(T, B)
    H = branch_operator(T, split.branch)
    if split.branch == "T":
        family = split.L
    else:
        # off-diagonal forms of Id - T are those of T negated, so B serves both
        nodes, diag, norms = _diagonals(H, B)
        family = large_diagonal(nodes, diag, norms)
    sel = condense(family, B, n, p, threshold=threshold)

    proj = block_projection(H, B, family)
    fam_nodes = [I for I in B.nodes() if I in set(family)]
    Rb = restriction_matrix(B, sel, family, p)
    E = embedding_matrix(B, sel, p)
    w = H.weights
    HV = H.matvec(proj.vectors)
    G = (proj.vectors.T @ (w[:, None] * HV)) / proj.diagonal[:, None]
    D = np.sum(proj.vectors ** 2 * w[:, None], axis=0)
    sq = np.sqrt(D)
    off = G - np.eye(len(fam_nodes))
    contraction = float(np.linalg.norm(sq[:, None] * off / sq[None, :], 2)) if off.size else 0.0
    error_term = float(np.max(np.abs(off))) if off.size else 0.0
    neumann_ok = contraction <= 0.5

    Pb = (proj.vectors * w[:, None] / proj.diagonal[None, :]).T   # block coordinates of P0 f
    P0 = Rb @ Pb
    P = Rb @ np.linalg.solve(G, Pb)
    residual = factor_residual(E, P, H, n)
    residual0 = factor_residual(E, P0, H, n)
    theory = {
        "m_at_least_Cp_n_2n": m >= math.ceil(NormConstants(p).C_p * n * (1 << n)),
        "carleson_at_least_n_2n": sel.carleson >= n * (1 << n),
        "measure_bounds": not sel.measure_bound_violations(),
        "neumann_half": bool(neumann_ok),
    }
    recorded_mode = "conformant" if mode == "conformant" and all(theory.values()) else "best-effort"
    cert = FactorizationCertificate(
        p=float(p), n=n, m=m, N=N, mode=recorded_mode, branch=split.branch, split=split,
        family=tuple(family), selection=sel, E=E, P=P, P_uncorrected=P0,
        residual=residual, residual_uncorrected=residual0, contraction=contraction,
        error_term=error_term, neumann_ok=bool(neumann_ok),
        norm_E=operator_norm(E, n, N, p), norm_P=operator_norm(P, N, n, p),
        norm_P_uncorrected=operator_norm(P0, N, n, p), theory_conditions=theory,
        diagnostics={"requested_mode": mode, "threshold": threshold,
                     "block_basis": [r.to_json() for r in B.reports],
                     "block_projection_norm2": proj.norm2(),
                     "family_size": len(family)})
    return cert
