"""Thinning D_N against a finite-dimensional subspace of dyadic H^1_N.

Given a basis of an n-dimensional subspace, sample a net of its H^1 unit
sphere, drop the intervals where some net vector has a large Haar coefficient,
then for each net vector cut the remaining family (enumerated depth-first) into
maximal stopping-time blocks whose partial square function stays below
tau ||x_i||, and keep the block with the largest Carleson constant. The final
family is condensed to a depth-n tree {B_J}, and Q is the orthogonal
projection onto span{b_J}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from numba import njit

from .dyadic import from_canonical
from .errors import DomainError, InsufficientCarleson, PreconditionError
from .factorization import CondensationSelection, condense
from .haar import (StepFunction, dimension, haar_coefficients, h1_norm_coefficients,
                   interval_weights, level_of_position, position)


@lru_cache(maxsize=8)
def preorder(N: int) -> np.ndarray:
    """Positions of D_N in depth-first (parent, left subtree, right subtree) order."""
    d = dimension(N)
    out = np.empty(d, dtype=np.int64)
    stack = [0]
    t = 0
    while stack:
        p = stack.pop()
        out[t] = p
        t += 1
        if 2 * p + 2 < d:
            stack.append(2 * p + 2)
            stack.append(2 * p + 1)
    out.setflags(write=False)
    return out


@njit(cache=True)
def _stopping_blocks(members, coeff, level, N, limit):
    R = N + 1
    scale = 1.0 / (1 << R)
    s = np.zeros(1 << R)
    labels = np.empty(members.shape[0], dtype=np.int64)
    contrib = np.zeros(members.shape[0] + 1)
    block = 0
    cur = 0.0
    start = 0
    for t in range(members.shape[0]):
        p = members[t]
        lv = level[p]
        width = 1 << (R - lv)
        a = (p - ((1 << lv) - 1)) * width
        c2 = coeff[p] * coeff[p]
        delta = 0.0
        if c2 > 0.0:
            for cell in range(a, a + width):
                delta += math.sqrt(s[cell] + c2) - math.sqrt(s[cell])
            delta *= scale
        if cur + delta > limit and t > start:
            contrib[block] = cur
            block += 1
            for u in range(start, t):
                q = members[u]
                lq = level[q]
                wq = 1 << (R - lq)
                aq = (q - ((1 << lq) - 1)) * wq
                for cell in range(aq, aq + wq):
                    s[cell] = 0.0
            start = t
            cur = 0.0
            delta = math.sqrt(c2) * width * scale
        for cell in range(a, a + width):
            s[cell] += c2
        cur += delta
        labels[t] = block
    contrib[block] = cur
    return labels, contrib[:block + 1]


@njit(cache=True)
def _block_carleson(members, labels, nblocks, level, dim):
    """Carleson constant of every labelled sub-family (one ancestor sweep)."""
    owner = np.full(dim, -1, dtype=np.int64)
    for t in range(members.shape[0]):
        owner[members[t]] = labels[t]
    mass = np.zeros(dim)
    for t in range(members.shape[0]):
        p = members[t]
        b = labels[t]
        w = 1.0 / (1 << level[p])
        q = p
        while True:
            if owner[q] == b:
                mass[q] += w
            if q == 0:
                break
            q = (q - 1) // 2
    out = np.zeros(nblocks)
    for t in range(members.shape[0]):
        p = members[t]
        r = mass[p] * (1 << level[p])
        if r > out[labels[t]]:
            out[labels[t]] = r
    return out


def stopping_time_blocks(members: np.ndarray, coeffs: np.ndarray, N: int, limit: float):
    """Greedy maximal runs (in the given order) with partial square-function integral <= limit.

    Returns (labels, contributions). A single interval above ``limit`` forms
    its own block.
    """
    members = np.ascontiguousarray(members, dtype=np.int64)
    if members.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    level = level_of_position(N).astype(np.int64)
    return _stopping_blocks(members, np.asarray(coeffs, dtype=float), level, N, float(limit))


def block_carleson(members: np.ndarray, labels: np.ndarray, N: int) -> np.ndarray:
    if members.size == 0:
        return np.zeros(0)
    level = level_of_position(N).astype(np.int64)
    nblocks = int(labels.max()) + 1
    return _block_carleson(np.ascontiguousarray(members, dtype=np.int64),
                           np.ascontiguousarray(labels, dtype=np.int64), nblocks, level,
                           dimension(N))


def family_carleson_fast(members: np.ndarray, N: int) -> float:
    if members.size == 0:
        return 0.0
    return float(block_carleson(members, np.zeros(members.size, dtype=np.int64), N)[0])


def default_tau(eps: float, n: int) -> float:
    """Largest tau = eta with tau + eta < eps 2^-n / ln n."""
    if n < 2:
        raise PreconditionError("the subspace dimension must be at least 2")
    return float(np.nextafter(eps * 2.0 ** -n / math.log(n) / 2.0, 0.0))


def random_subspace(N: int, dim: int, seed: int) -> list[np.ndarray]:
    """Coefficient vectors with i.i.d. standard normal c_I (equal L^2 energy per level)."""
    rng = np.random.default_rng(seed)
    return [rng.standard_normal(dimension(N)) for _ in range(dim)]


@dataclass
class ThinningStage:
    vector: int
    carleson_before: float
    carleson_after: float
    blocks: int
    chosen: int
    contributions: list
    limit: float
    last_block_flagged: bool
    size_after: int

    def to_json(self) -> dict:
        return {"vector": self.vector, "carleson_before": self.carleson_before,
                "carleson_after": self.carleson_after, "blocks": self.blocks,
                "chosen": self.chosen, "limit": self.limit,
                "max_contribution": max(self.contributions, default=0.0),
                "chosen_contribution": self.contributions[self.chosen] if self.contributions else 0.0,
                "last_block_flagged": self.last_block_flagged, "size_after": self.size_after}


@dataclass
class NetThinningResult:
    N: int
    n: int
    eps: float
    tau: float
    eta: float
    net: np.ndarray                   # dim(N) x M coefficient columns, unit H^1 norm
    net_size: int
    removed: int                      # |L|, intervals with a large coefficient
    stages: list
    family: np.ndarray                # positions of G_M (depth-first order)
    selection: CondensationSelection
    vectors: np.ndarray               # columns b_J, J in D_n canonical order
    mode: str
    diagnostics: dict = field(default_factory=dict)

    @property
    def norms(self) -> np.ndarray:
        """||b_J||_2^2 = |B_J|."""
        return np.sum(self.vectors ** 2 * interval_weights(self.N)[:, None], axis=0)

    def project(self, c: np.ndarray) -> np.ndarray:
        """Q on coefficient vectors (columns for 2-d input)."""
        w = interval_weights(self.N)
        c = np.asarray(c, dtype=float)
        wc = w * c if c.ndim == 1 else w[:, None] * c
        coords = self.vectors.T @ wc
        coords = coords / (self.norms if c.ndim == 1 else self.norms[:, None])
        return self.vectors @ coords

    def chain(self) -> list[float]:
        if not self.stages:
            return []
        return [self.stages[0].carleson_before] + [s.carleson_after for s in self.stages]

    def to_json(self) -> dict:
        return {"N": self.N, "n": self.n, "eps": self.eps, "tau": self.tau, "eta": self.eta,
                "net_size": self.net_size, "removed": self.removed, "mode": self.mode,
                "chain": self.chain(), "stages": [s.to_json() for s in self.stages],
                "final_family_size": int(self.family.size),
                "selection": self.selection.to_json(), "diagnostics": self.diagnostics}


def _as_coefficients(x, N: int) -> np.ndarray:
    if isinstance(x, StepFunction):
        return haar_coefficients(x, N)
    c = np.asarray(x, dtype=float)
    if c.shape != (dimension(N),):
        raise DomainError(f"expected {dimension(N)} coefficients")
    return c


def net_thinning(basis: Sequence, N: int, eps: float = 0.5, *, n: int | None = None,
                 net_size: int = 32, seed: int = 0, tau: float | None = None,
                 eta: float | None = None, mode: str = "best-effort") -> NetThinningResult:
    """Thin D_N so that Q kills the subspace spanned by ``basis`` up to eps in H^1.

    ``mode`` "conformant" requires the final Carleson constant to reach 4^n;
    "best-effort" only requires the depth-n condensation with measure bounds.
    """
    if mode not in ("conformant", "best-effort"):
        raise DomainError(f"unknown mode {mode!r}")
    if not eps > 0:
        raise DomainError("eps must be positive")
    cols = np.stack([_as_coefficients(x, N) for x in basis], axis=1)
    rank = int(np.linalg.matrix_rank(cols))
    if rank != cols.shape[1]:
        raise PreconditionError("basis vectors are linearly dependent")
    n = rank if n is None else n
    if n != rank:
        raise PreconditionError(f"subspace has dimension {rank}, not n={n}")
    if n < 2:
        raise PreconditionError("the subspace dimension must be at least 2")
    tau = default_tau(eps, n) if tau is None else float(tau)
    eta = tau if eta is None else float(eta)

    rng = np.random.default_rng(seed)
    mix = rng.standard_normal((n, net_size))
    net = np.concatenate([cols, cols @ mix], axis=1)
    net = net / np.array([h1_norm_coefficients(net[:, i], N) for i in range(net.shape[1])])
    w = interval_weights(N)
    pairings = np.abs(net) * w[:, None]          # |<x_i, h_J>|
    large = np.any(pairings >= tau, axis=1)
    order = preorder(N)
    members = order[~large[order]]

    stages = []
    for i in range(net.shape[1]):
        limit = tau * h1_norm_coefficients(net[:, i], N)
        before = family_carleson_fast(members, N)
        labels, contrib = stopping_time_blocks(members, net[:, i], N, limit)
        if members.size == 0:
            break
        carl = block_carleson(members, labels, N)
        chosen = int(np.argmax(carl))
        members = members[labels == chosen]
        stages.append(ThinningStage(i, before, float(carl[chosen]), len(contrib), chosen,
                                    [float(v) for v in contrib], limit,
                                    bool(contrib[-1] > limit), int(members.size)))
    final_carleson = family_carleson_fast(members, N)
    if mode == "conformant" and final_carleson < 4 ** n:
        raise InsufficientCarleson(
            f"final Carleson constant {final_carleson:.6g} below 4^n = {4 ** n}",
            diagnostics={"carleson": final_carleson, "threshold": 4 ** n,
                         "chain": [s.to_json() for s in stages]})
    intervals = [from_canonical(int(p) + 1) for p in members]
    selection = _condense_with_bounds(intervals, n)
    V = np.zeros((dimension(N), dimension(n)))
    for b, K in enumerate(selection.nodes()):
        for J in selection.assignment[K]:
            V[position(J), b] = 1.0
    return NetThinningResult(N=N, n=n, eps=float(eps), tau=tau, eta=eta, net=net,
                             net_size=net.shape[1], removed=int(large.sum()), stages=stages,
                             family=members, selection=selection, vectors=V, mode=mode,
                             diagnostics={"final_carleson": final_carleson,
                                          "net_sampling": "basis plus seeded Gaussian mixtures",
                                          "seed": seed})


def _condense_with_bounds(intervals, n: int) -> CondensationSelection:
    try:
        sel = condense(intervals, None, n, threshold=0)
    except InsufficientCarleson as exc:
        raise InsufficientCarleson(f"thinned family does not condense: {exc}",
                                   diagnostics=exc.diagnostics) from exc
    bad = sel.measure_bound_violations()
    if bad:
        raise InsufficientCarleson(
            f"condensed tree violates the measure bounds at {bad}",
            diagnostics={"measure_bound_violations": bad, "achieved_depth": n})
    return sel


# -- verification ----------------------------------------------------------------

def verify_net_thinning(result: NetThinningResult, basis: Sequence, samples: int = 100,
                        seed: int = 1) -> dict:
    """Post-hoc checks: ||Qx|| <= eps ||x|| on random x, projection identities, ||Q|| lower bound."""
    N = result.N
    w = interval_weights(N)
    cols = np.stack([_as_coefficients(x, N) for x in basis], axis=1)
    rng = np.random.default_rng(seed)
    xs = cols @ rng.standard_normal((cols.shape[1], samples))
    Qx = result.project(xs)
    ratios = np.array([h1_norm_coefficients(Qx[:, i], N) / h1_norm_coefficients(xs[:, i], N)
                       for i in range(samples)])
    V = result.vectors
    gram = V.T @ (w[:, None] * V)
    gram_error = float(np.max(np.abs(gram - np.diag(result.norms))))
    u = rng.standard_normal((dimension(N), 4))
    v = rng.standard_normal((dimension(N), 4))
    Qu, Qv = result.project(u), result.project(v)
    idem = float(np.max(np.abs(result.project(Qu) - Qu)))
    sym = float(np.max(np.abs(np.sum(w[:, None] * Qu * v, axis=0)
                              - np.sum(w[:, None] * u * Qv, axis=0))))
    qnorm = q_norm_lower_bound(result, rng)
    pair = np.abs(V.T @ (w[:, None] * result.net))                      # |<x_i, b_J>|
    bound = (result.tau + result.eta)
    violations = [(int(j), int(i)) for j, i in zip(*np.nonzero(pair > bound))]
    return {"samples": samples, "max_ratio": float(ratios.max()),
            "eps_bound_holds": bool(np.all(ratios <= result.eps)),
            "gram_error": gram_error, "idempotence_error": idem, "symmetry_error": sym,
            "orthogonal_projection": bool(max(gram_error, idem, sym) <= 1e-10),
            "q_norm_lower_bound": qnorm, "q_norm_at_most_4": bool(qnorm <= 4.0),
            "coefficient_bound": bound,
            "coefficient_bound_violations": len(violations),
            "max_net_coefficient": float(pair.max()) if pair.size else 0.0}


def q_norm_lower_bound(result: NetThinningResult, rng: np.random.Generator,
                       random_tests: int = 32) -> float:
    """max ||Qf||_{H^1} / ||f||_{H^1} over b_J, single Haar functions in the blocks,
    block-restricted random signs and random functions."""
    N = result.N
    tests = [result.vectors]
    singles = []
    for K in result.selection.nodes():
        for J in result.selection.assignment[K][:4]:
            e = np.zeros(dimension(N))
            e[position(J)] = 1.0
            singles.append(e)
    if singles:
        tests.append(np.stack(singles, axis=1))
    signs = result.vectors * rng.choice([-1.0, 1.0], size=result.vectors.shape)
    tests.append(signs)
    tests.append(rng.standard_normal((dimension(N), random_tests)))
    F = np.concatenate(tests, axis=1)
    QF = result.project(F)
    best = 0.0
    for i in range(F.shape[1]):
        den = h1_norm_coefficients(F[:, i], N)
        if den > 0:
            best = max(best, h1_norm_coefficients(QF[:, i], N) / den)
    return best
