"""Linear operators on span{h_I : I in D_N} given in Haar coordinates.

An operator acts on coefficient vectors c (c_I relative to the L-infinity
normalized h_I). Because ||h_I||_2^2 = |I|, the L^2 adjoint of a coefficient
matrix M is W^-1 M^T W with W = diag(|I|), not the plain transpose.

Operators are sums of terms so that desk-scale levels (N ~ 14, dimension
32767) stay tractable: dense blocks, level-preserving diagonal-times-permutation
terms (Haar multipliers and rearrangements) and low-rank terms.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.sparse.linalg import LinearOperator, svds

from .errors import DomainError, PreconditionError
from .haar import (StepFunction, coefficients_from_values, dimension, haar_coefficients,
                   interval_weights, level_slice, lp_norm_values, synthesize_vector)

DENSE_LIMIT = 4095      # largest dimension materialized as a full matrix
CELL_NORM_MAX_LEVEL = 10  # largest N for exact cell-basis p=1 / p=inf norms


def burkholder_constant(p: float) -> float:
    """Unconditional constant of martingale differences in L^p, max(p, q) - 1."""
    q = p / (p - 1.0)
    return max(p, q) - 1.0


# -- terms ---------------------------------------------------------------------

class DenseTerm:
    kind = "dense"

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=float)

    def matvec(self, c):
        return self.matrix @ c

    def rmatvec(self, c):
        return self.matrix.T @ c

    def adjoint(self, w):
        return DenseTerm((self.matrix.T * w[None, :]) / w[:, None])

    def scaled(self, s):
        return DenseTerm(self.matrix * s)

    def dense(self, d):
        return self.matrix

    def payload(self):
        return {"kind": self.kind, "rows": self.matrix.tolist()}


class DiagPermTerm:
    """(M c)_I = diag_I * c_{perm[I]}, perm mapping each level onto itself."""

    kind = "diag-perm"

    def __init__(self, diag, perm=None):
        self.diag = np.asarray(diag, dtype=float)
        self.perm = None if perm is None else np.asarray(perm, dtype=np.int64)

    @property
    def is_multiplier(self):
        return self.perm is None

    def matvec(self, c):
        d = self.diag if c.ndim == 1 else self.diag[:, None]
        return d * (c if self.perm is None else c[self.perm])

    def rmatvec(self, c):
        d = self.diag if c.ndim == 1 else self.diag[:, None]
        scaled = d * c
        if self.perm is None:
            return scaled
        out = np.zeros_like(scaled)
        out[self.perm] = scaled
        return out

    def adjoint(self, w):
        if self.perm is None:
            return DiagPermTerm(self.diag)
        inverse = np.empty_like(self.perm)
        inverse[self.perm] = np.arange(len(self.perm))
        return DiagPermTerm(self.diag[inverse], inverse)

    def scaled(self, s):
        return DiagPermTerm(self.diag * s, self.perm)

    def dense(self, d):
        out = np.zeros((d, d))
        cols = np.arange(d) if self.perm is None else self.perm
        out[np.arange(d), cols] = self.diag
        return out

    def payload(self):
        return {"kind": self.kind, "diag": self.diag.tolist(),
                "perm": None if self.perm is None else self.perm.tolist()}


class LowRankTerm:
    """M c = left @ (right^T c)."""

    kind = "low-rank"

    def __init__(self, left, right):
        self.left = np.atleast_2d(np.asarray(left, dtype=float))
        self.right = np.atleast_2d(np.asarray(right, dtype=float))
        if self.left.shape != self.right.shape:
            raise DomainError("low-rank factors must have equal shapes")

    def matvec(self, c):
        return self.left @ (self.right.T @ c)

    def rmatvec(self, c):
        return self.right @ (self.left.T @ c)

    def adjoint(self, w):
        return LowRankTerm(self.right / w[:, None], self.left * w[:, None])

    def scaled(self, s):
        return LowRankTerm(self.left * s, self.right)

    def dense(self, d):
        return self.left @ self.right.T

    def payload(self):
        return {"kind": self.kind, "left": self.left.tolist(), "right": self.right.tolist()}


def _term_from_payload(data):
    kind = data["kind"]
    if kind == "dense":
        return DenseTerm(data["rows"])
    if kind == "diag-perm":
        return DiagPermTerm(data["diag"], data.get("perm"))
    if kind == "low-rank":
        return LowRankTerm(data["left"], data["right"])
    raise DomainError(f"unknown operator term {kind!r}")


# -- operator ------------------------------------------------------------------

class HaarOperator:
    """A linear map on L^p_N = span{h_I : |I| >= 2^-N} in Haar coordinates."""

    def __init__(self, N: int, terms: Sequence, label: str = ""):
        self.N = N
        self.dim = dimension(N)
        self.terms = tuple(terms)
        self.label = label
        self._weights = interval_weights(N)
        self.norm_cache: dict = {}
        for term in self.terms:
            self._validate(term)

    def _validate(self, term):
        d = self.dim
        if isinstance(term, DenseTerm):
            if term.matrix.shape != (d, d) or not np.all(np.isfinite(term.matrix)):
                raise DomainError(f"dense term must be a finite {d}x{d} matrix")
        elif isinstance(term, DiagPermTerm):
            if term.diag.shape != (d,) or not np.all(np.isfinite(term.diag)):
                raise DomainError("diagonal has wrong length or non-finite entries")
            if term.perm is not None:
                if sorted(term.perm.tolist()) != list(range(d)):
                    raise DomainError("perm is not a permutation")
                for n in range(self.N + 1):
                    block = term.perm[level_slice(n)]
                    s = level_slice(n)
                    if block.min() < s.start or block.max() >= s.stop:
                        raise DomainError("perm must map every level onto itself")
        elif isinstance(term, LowRankTerm):
            if term.left.shape[0] != d or not np.all(np.isfinite(term.left)) \
                    or not np.all(np.isfinite(term.right)):
                raise DomainError("low-rank factors have wrong shape or non-finite entries")
        else:
            raise DomainError(f"unsupported term {term!r}")

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    # algebra
    def matvec(self, c: np.ndarray) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        if c.shape[0] != self.dim:
            raise DomainError(f"dimension mismatch: {c.shape[0]} vs {self.dim}")
        out = np.zeros_like(c)
        for term in self.terms:
            out = out + term.matvec(c)
        return out

    def rmatvec(self, c: np.ndarray) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        out = np.zeros_like(c)
        for term in self.terms:
            out = out + term.rmatvec(c)
        return out

    def __add__(self, other: "HaarOperator") -> "HaarOperator":
        if other.N != self.N:
            raise DomainError("operators live on different levels")
        return HaarOperator(self.N, self.terms + other.terms)

    def __mul__(self, scalar) -> "HaarOperator":
        return HaarOperator(self.N, [t.scaled(float(scalar)) for t in self.terms], self.label)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other)

    def complement(self) -> "HaarOperator":
        """Id - T."""
        op = identity(self.N) - self
        op.label = f"Id-({self.label})" if self.label else "Id-T"
        return op

    def adjoint(self) -> "HaarOperator":
        return HaarOperator(self.N, [t.adjoint(self._weights) for t in self.terms],
                            f"({self.label})*" if self.label else "")

    @property
    def is_multiplier(self) -> bool:
        return all(isinstance(t, DiagPermTerm) and t.is_multiplier for t in self.terms)

    def multiplier_values(self) -> np.ndarray:
        if not self.is_multiplier:
            raise DomainError("operator is not a Haar multiplier")
        return sum((t.diag for t in self.terms), np.zeros(self.dim))

    def to_dense(self) -> np.ndarray:
        if self.dim > DENSE_LIMIT:
            raise DomainError(f"dimension {self.dim} too large for a dense matrix")
        out = np.zeros((self.dim, self.dim))
        for term in self.terms:
            out += term.dense(self.dim)
        return out

    def orthonormal(self) -> LinearOperator:
        """W^1/2 M W^-1/2: the operator in the L^2-orthonormal basis h_I/|I|^1/2."""
        s = np.sqrt(self._weights)

        def mm(x):
            return s[:, None] * self.matvec(x / s[:, None])

        def rmm(x):
            return self.rmatvec(x * s[:, None]) / s[:, None]

        def mv(x):
            return mm(np.asarray(x).reshape(self.dim, 1)).ravel()

        def rmv(x):
            return rmm(np.asarray(x).reshape(self.dim, 1)).ravel()

        return LinearOperator((self.dim, self.dim), matvec=mv, rmatvec=rmv,
                              matmat=mm, rmatmat=rmm, dtype=float)

    # serialization
    def to_json(self) -> dict:
        if self.dim <= DENSE_LIMIT:
            return {"N": self.N, "format": "dense-haar", "rows": self.to_dense().tolist()}
        return {"N": self.N, "format": "structured-haar",
                "terms": [t.payload() for t in self.terms]}

    @classmethod
    def from_json(cls, data: dict) -> "HaarOperator":
        try:
            N = int(data["N"])
            fmt = data.get("format", "dense-haar")
            if fmt == "dense-haar":
                return cls(N, [DenseTerm(data["rows"])], "file")
            if fmt == "structured-haar":
                return cls(N, [_term_from_payload(t) for t in data["terms"]], "file")
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"malformed operator file: {exc}") from exc
        raise DomainError(f"unknown operator format {fmt!r}")

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.N).encode())
        for term in self.terms:
            h.update(term.kind.encode())
            for name in ("matrix", "diag", "perm", "left", "right"):
                value = getattr(term, name, None)
                if value is not None:
                    h.update(name.encode())
                    h.update(np.ascontiguousarray(value).tobytes())
        return h.hexdigest()


def identity(N: int) -> HaarOperator:
    return HaarOperator(N, [DiagPermTerm(np.ones(dimension(N)))], "identity")


def zero(N: int) -> HaarOperator:
    return HaarOperator(N, [DiagPermTerm(np.zeros(dimension(N)))], "zero")


def multiplier(values: np.ndarray, label: str = "multiplier") -> HaarOperator:
    values = np.asarray(values, dtype=float)
    N = (len(values) + 1).bit_length() - 2
    if dimension(N) != len(values):
        raise DomainError(f"{len(values)} is not a Haar dimension 2^(N+1)-1")
    return HaarOperator(N, [DiagPermTerm(values)], label)


def dense(matrix: np.ndarray, label: str = "dense") -> HaarOperator:
    matrix = np.asarray(matrix, dtype=float)
    N = (matrix.shape[0] + 1).bit_length() - 2
    if matrix.shape != (dimension(N), dimension(N)):
        raise DomainError(f"matrix shape {matrix.shape} is not a Haar dimension")
    return HaarOperator(N, [DenseTerm(matrix)], label)


# -- applying operators to functions -------------------------------------------

def apply(T: HaarOperator, f: StepFunction) -> StepFunction:
    """analyze -> matrix multiply -> synthesize (the mean of f is discarded)."""
    if f.resolution > T.N + 1:
        raise DomainError(f"function at resolution {f.resolution} is finer than L^p_{T.N}")
    coeffs = haar_coefficients(f, T.N)
    return StepFunction(T.N + 1, synthesize_vector(T.matvec(coeffs), T.N))


def bilinear(T: HaarOperator, f: StepFunction, g: StepFunction) -> float:
    """<Tf, g> by cell quadrature."""
    Tf = apply(T, f)
    R = max(Tf.resolution, g.resolution)
    return float(np.dot(Tf.refine(R).values, g.refine(R).values)) / (1 << R)


def form(T: HaarOperator, c: np.ndarray, d: np.ndarray) -> float:
    """<T f, g> for coefficient vectors c of f and d of g."""
    return float(np.dot(T.matvec(c) * T.weights, d))


def cell_matrix(T: HaarOperator) -> np.ndarray:
    """The operator acting on cell values of the grid 2^-(N+1) (constants are killed)."""
    cells = 1 << (T.N + 1)
    coeffs = coefficients_from_values(np.eye(cells), T.N)
    return synthesize_vector(T.matvec(coeffs), T.N)


# -- norms ----------------------------------------------------------------------

@dataclass
class OperatorNormEstimate:
    p: float
    lower_bound: float
    upper_bound: float
    method: str
    converged: bool
    witness: np.ndarray | None = None

    def __post_init__(self):
        if self.lower_bound > self.upper_bound * (1 + 1e-12) + 1e-15:
            raise AssertionError(f"lower {self.lower_bound} above upper {self.upper_bound}")

    def to_json(self) -> dict:
        return {"p": self.p, "lower": self.lower_bound, "upper": self.upper_bound,
                "method": self.method, "converged": self.converged}


def weighted_lp_norm_bounds(A: np.ndarray, w_in: np.ndarray, w_out: np.ndarray,
                            p: float) -> tuple[float, float]:
    """Exact L^1 and L^inf norms of a matrix between weighted l^p spaces."""
    absA = np.abs(A)
    n1 = float(np.max((absA * w_out[:, None]).sum(axis=0) / w_in))
    ninf = float(np.max(absA.sum(axis=1)))
    return n1, ninf


def riesz_thorin(n1: float, ninf: float, p: float) -> float:
    return n1 ** (1.0 / p) * ninf ** (1.0 - 1.0 / p)


def _duality_map(y: np.ndarray, p: float) -> np.ndarray:
    return np.sign(y) * np.abs(y) ** (p - 1.0)


def lp_lower_bound(apply_fn, adjoint_fn, starts, p: float, budget: int,
                   w_in=None, w_out=None, project=None):
    """Dual-norm alignment ascent x <- J_q(A^* J_p(A x)); returns best ratio and witness.

    ``apply_fn`` and ``adjoint_fn`` act on cell vectors; weights are cell measures
    (uniform when omitted); ``project`` maps a vector into the admissible subspace.
    """
    q = p / (p - 1.0)

    def norm(v, w):
        if w is None:
            return lp_norm_values(v, p)
        return float(np.sum(w * np.abs(v) ** p)) ** (1.0 / p)

    best, witness, converged = 0.0, None, False
    for x in starts:
        x = project(x) if project else x
        nx = norm(x, w_in)
        if nx == 0.0:
            continue
        x = x / nx
        previous = -1.0
        for _ in range(max(1, budget)):
            y = apply_fn(x)
            ratio = norm(y, w_out)
            if ratio > best:
                best, witness = ratio, x.copy()
            if ratio == 0.0 or abs(ratio - previous) <= 1e-10 * ratio:
                converged = True
                break
            previous = ratio
            z = _duality_map(y, p) * (1.0 if w_out is None else w_out)
            x = adjoint_fn(z)
            if w_in is not None:
                x = x / w_in
            x = _duality_map(x, q)
            x = project(x) if project else x
            nx = norm(x, w_in)
            if nx == 0.0:
                break
            x = x / nx
    return best, witness, converged


def _term_upper_bound(T: HaarOperator, term, p: float) -> float:
    if isinstance(term, DiagPermTerm):
        if term.diag.size == 0:
            return 0.0
        hi, lo = float(term.diag.max()), float(term.diag.min())
        if p == 2.0:
            return max(abs(hi), abs(lo))
        if term.is_multiplier:
            # lambda = mid + rad * eps with |eps| <= 1, and unconditionality of the Haar system
            return abs(hi + lo) / 2.0 + (hi - lo) / 2.0 * burkholder_constant(p)
        return math.inf
    if isinstance(term, LowRankTerm):
        if p == 2.0:
            s = np.sqrt(T.weights)
            qa = np.linalg.qr(term.left * s[:, None], mode="r")
            qb = np.linalg.qr(term.right / s[:, None], mode="r")
            return float(np.linalg.norm(qa @ qb.T, 2))
        q = p / (p - 1.0)
        total = 0.0
        for r in range(term.left.shape[1]):
            u = synthesize_vector(term.left[:, r], T.N)
            v = synthesize_vector(term.right[:, r] / T.weights, T.N)
            total += lp_norm_values(u, p) * lp_norm_values(v, q)
        return total
    if isinstance(term, DenseTerm):
        if p == 2.0:
            s = np.sqrt(T.weights)
            return float(np.linalg.norm(s[:, None] * term.matrix / s[None, :], 2))
        return math.inf
    return math.inf


def upper_bound(T: HaarOperator, p: float) -> float:
    """Cheap certified upper bound: the triangle inequality over terms."""
    return sum(_term_upper_bound(T, t, float(p)) for t in T.terms)


def opnorm(T: HaarOperator, p: float = 2.0, budget: int = 100, seed: int = 0,
           restarts: int = 2) -> OperatorNormEstimate:
    """Certified lower bound (by a witness) and an upper bound for ||T : L^p_N -> L^p_N||."""
    if not 1 < p < math.inf:
        raise PreconditionError("p must lie in (1, inf)")
    if budget < 1:
        raise PreconditionError("iteration budget must be >= 1")
    p = float(p)
    key = p  # operators are immutable; the first estimate per p is memoized
    if key in T.norm_cache:
        return T.norm_cache[key]
    est = _opnorm_2(T, budget, seed) if p == 2.0 else _opnorm_p(T, p, budget, seed, restarts)
    T.norm_cache[key] = est
    return est


def _opnorm_p(T: HaarOperator, p: float, budget: int, seed: int,
              restarts: int) -> OperatorNormEstimate:
    rng = np.random.default_rng(seed)
    upper = upper_bound(T, p)
    method = "triangle"
    if T.N <= CELL_NORM_MAX_LEVEL:
        A = cell_matrix(T)
        w = np.full(A.shape[0], 1.0 / A.shape[0])
        n1, ninf = weighted_lp_norm_bounds(A, w, w, p)
        interp = riesz_thorin(n1, ninf, p)
        if interp < upper:
            upper, method = interp, "riesz-thorin"
    cells = 1 << (T.N + 1)
    Tstar = T.adjoint()

    def fwd(x):
        return synthesize_vector(T.matvec(coefficients_from_values(x, T.N)), T.N)

    def bwd(z):
        return synthesize_vector(Tstar.matvec(coefficients_from_values(z, T.N)), T.N)

    def center(x):
        return x - x.mean()

    two = _opnorm_2(T, budget, seed)
    starts = [synthesize_vector(two.witness, T.N)] if two.witness is not None else []
    starts += [rng.standard_normal(cells) for _ in range(restarts)]
    lower, witness, converged = lp_lower_bound(fwd, bwd, starts, p, budget, project=center)
    lower = min(lower, upper)
    coeff_witness = None if witness is None else coefficients_from_values(witness, T.N)
    return OperatorNormEstimate(p, lower, upper, f"alignment-ascent/{method}", converged,
                                coeff_witness)


def _structured_parts(T: HaarOperator, s: np.ndarray):
    """(D, L, R) with W^1/2 M W^-1/2 = diag(D) + L R^T, or None if T has other terms."""
    D = np.zeros(T.dim)
    lefts, rights = [], []
    for term in T.terms:
        if isinstance(term, DiagPermTerm) and term.is_multiplier:
            D += term.diag
        elif isinstance(term, LowRankTerm):
            lefts.append(term.left * s[:, None])
            rights.append(term.right / s[:, None])
        else:
            return None
    if not lefts:
        return D, np.zeros((T.dim, 0)), np.zeros((T.dim, 0))
    return D, np.hstack(lefts), np.hstack(rights)


def _multiplier_lowrank_norm2(D, L, R, iterations: int = 12):
    """Largest singular value of diag(D) + L R^T by inertia bisection.

    The symmetric dilation K = [[0, A], [A^T, 0]] is a rank-2r update of
    K0 = [[0, D], [D, 0]]; Sylvester's law of inertia applied to the bordered
    matrix counts eigenvalues of K above any shift from a 2r x 2r capacitance
    matrix, so the top eigenvalue (= ||A||_2) is bracketed by bisection. A
    witness comes from shifted inverse iteration with the Woodbury formula.
    """
    d = len(D)
    r = L.shape[1]
    absD = np.abs(D)
    if r == 0:
        i = int(np.argmax(absD))
        v = np.zeros(d)
        v[i] = 1.0
        top = float(absD[i])
        return top, top, v
    S = np.block([[np.zeros((r, r)), np.eye(r)], [np.eye(r), np.zeros((r, r))]])

    def capacitance(mu):
        den = mu * mu - D * D
        alpha = -mu / den
        beta = -D / den
        LaL = L.T @ (alpha[:, None] * L)
        LbR = L.T @ (beta[:, None] * R)
        RaR = R.T @ (alpha[:, None] * R)
        inner = np.block([[LaL, LbR], [LbR.T, RaR]])
        return inner, alpha, beta

    def count_above(mu):
        inner, _, _ = capacitance(mu)
        C = -S - inner
        positive = int(np.sum(np.linalg.eigvalsh((C + C.T) / 2) > 0))
        return int(np.sum(absD > mu)) + positive - r

    hi = float(absD.max() + np.linalg.norm(L, 2) * np.linalg.norm(R, 2)) * (1 + 1e-12) + 1e-300
    lo = 0.0
    if count_above(hi) != 0:
        raise AssertionError("upper bracket does not bound the spectrum")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if np.any(absD == mid):
            mid = np.nextafter(mid, hi)
        if count_above(mid) >= 1:
            lo = mid
        else:
            hi = mid
    # inverse iteration on K - hi via Woodbury
    shift = hi * (1 + 1e-7) + 1e-300
    if np.any(absD == shift):
        shift = np.nextafter(shift, np.inf)
    inner, alpha, beta = capacitance(shift)
    Z = np.zeros((2 * d, 2 * r))
    Z[:d, :r] = L
    Z[d:, r:] = R
    small = np.linalg.inv(S) + inner

    def solve(x):
        u, v = x[:d], x[d:]
        y = np.concatenate([alpha * u + beta * v, beta * u + alpha * v])
        corr = Z @ np.linalg.lstsq(small, Z.T @ y, rcond=None)[0]
        cu, cv = corr[:d], corr[d:]
        return y - np.concatenate([alpha * cu + beta * cv, beta * cu + alpha * cv])

    rng = np.random.default_rng(0)
    x = rng.standard_normal(2 * d)
    for _ in range(iterations):
        x = solve(x)
        x /= np.linalg.norm(x)
    v = x[d:]
    return lo, hi, v


def _opnorm_2(T: HaarOperator, budget: int, seed: int) -> OperatorNormEstimate:
    s = np.sqrt(T.weights)
    parts = None if T.dim <= 1023 else _structured_parts(T, s)
    if parts is not None:
        D, L, R = parts
        lo, hi, v = _multiplier_lowrank_norm2(D, L, R)
        nv = np.linalg.norm(v)
        lower = 0.0
        if nv > 0:
            v = v / nv
            lower = float(np.linalg.norm(D * v + L @ (R.T @ v)))
        lower = min(lower, hi)
        return OperatorNormEstimate(2.0, lower, hi, "inertia-bisection",
                                    hi - lower <= 1e-9 * max(hi, 1e-300), v / s)
    if T.dim <= DENSE_LIMIT:
        A = s[:, None] * T.to_dense() / s[None, :]
        U, sv, Vt = np.linalg.svd(A)
        v = Vt[0]
        lower = float(np.linalg.norm(A @ v))
        return OperatorNormEstimate(2.0, min(lower, sv[0]), float(sv[0]), "dense-svd", True,
                                    v / s)
    op = T.orthonormal()
    upper_tri = sum(_term_upper_bound(T, t, 2.0) for t in T.terms)
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(T.dim)
    try:
        _, sv, vt = svds(op, k=min(6, T.dim - 1), v0=v0, maxiter=max(budget, 50) * 20, tol=0)
        v = vt[int(np.argmax(sv))]
        converged = True
    except Exception:  # ARPACK non-convergence; fall back to power iteration
        v, converged = v0 / np.linalg.norm(v0), False
        for _ in range(budget):
            w = op.rmatvec(op.matvec(v))
            nw = np.linalg.norm(w)
            if nw == 0.0:
                break
            v = w / nw
    Av = op.matvec(v)
    lower = float(np.linalg.norm(Av))
    theta = lower ** 2
    residual = float(np.linalg.norm(op.rmatvec(Av) - theta * v))
    upper = min(upper_tri, math.sqrt(theta + residual))
    upper = max(upper, lower)
    converged = converged and (upper - lower) <= 1e-9 * max(lower, 1e-300)
    return OperatorNormEstimate(2.0, lower, upper, "lanczos-residual", converged, v / s)


# -- generators -----------------------------------------------------------------

class OperatorSpec(NamedTuple):
    kind: str
    args: tuple
    params: dict


_SPEC = re.compile(r"^(?P<kind>[a-z_\-]+)(?::(?P<rest>.*))?$")
_KINDS = {"identity": "identity", "id": "identity", "zero": "zero",
          "multiplier": "haar_multiplier", "haar_multiplier": "haar_multiplier",
          "random": "random_contraction", "random_contraction": "random_contraction",
          "perm": "permutation_of_haar", "permutation_of_haar": "permutation_of_haar",
          "file": "custom_from_file", "custom_from_file": "custom_from_file"}


def parse_spec(text: str) -> OperatorSpec:
    """Parse generator strings such as ``multiplier:bernoulli(0.5):seed=1``."""
    m = _SPEC.match(text.strip())
    if not m or m.group("kind") not in _KINDS:
        raise DomainError(f"unknown operator kind in {text!r}")
    kind = _KINDS[m.group("kind")]
    args, params = [], {}
    rest = m.group("rest")
    if kind == "custom_from_file":
        if not rest:
            raise DomainError("file: spec needs a path")
        return OperatorSpec(kind, (rest,), {})
    for part in filter(None, (rest or "").split(":")):
        if "=" in part and "(" not in part:
            key, value = part.split("=", 1)
            params[key] = value
        else:
            args.append(part)
    return OperatorSpec(kind, tuple(args), params)


def _draw_multiplier(dist: str, size: int, rng: np.random.Generator) -> np.ndarray:
    m = re.match(r"^(\w+)(?:\(([^)]*)\))?$", dist)
    if not m:
        raise DomainError(f"bad multiplier distribution {dist!r}")
    name = m.group(1)
    vals = [float(v) for v in m.group(2).split(",")] if m.group(2) else []
    if name == "bernoulli":
        prob = vals[0] if vals else 0.5
        return (rng.random(size) < prob).astype(float)
    if name in ("const", "constant"):
        return np.full(size, vals[0] if vals else 1.0)
    if name == "uniform":
        a, b = vals[:2] if len(vals) >= 2 else (-1.0, 1.0)
        return rng.uniform(a, b, size)
    if name == "sign":
        return rng.choice([-1.0, 1.0], size)
    raise DomainError(f"unknown multiplier distribution {name!r}")


def smooth_mode_coefficients(N: int, frequency: int) -> np.ndarray:
    """Haar coefficients of sqrt(2) cos(pi r x), from exact cell averages."""
    cells = 1 << (N + 1)
    edges = np.arange(cells + 1) / cells
    w = math.pi * frequency
    averages = math.sqrt(2.0) * np.diff(np.sin(w * edges)) * cells / w
    return coefficients_from_values(averages, N)


def default_kernel_weight(N: int) -> float:
    """0.1 from level 14 on, halved per missing level below it.

    The kernel couples h_J to earlier blocks at roughly weight * |J|; halving
    per level keeps that coupling resolvable by the block construction.
    """
    return 0.1 * min(1.0, 2.0 ** (N - 14))


def random_contraction(N: int, seed: int, p: float = 2.0, rank: int = 2,
                       kernel_weight: float | None = None) -> HaarOperator:
    """Random Haar multiplier plus a random smooth finite-rank kernel, scaled to norm <= 1.

    At p = 2 the result is scaled by the bisection upper bound so ||T||_2 is 1
    to working precision; at other p it is scaled by the certified upper bound.
    """
    if kernel_weight is None:
        kernel_weight = default_kernel_weight(N)
    rng = np.random.default_rng(seed)
    d = dimension(N)
    w = interval_weights(N)
    lam = rng.uniform(-1.0, 1.0, d)
    modes = np.stack([smooth_mode_coefficients(N, r) for r in range(1, rank + 1)], axis=1)
    C = rng.standard_normal((rank, rank))
    C /= np.linalg.norm(C, 2)
    # f -> sum_rs C_rs <f, phi_s> phi_r; <f, phi_s> = (W modes_s) . c
    left = modes @ C * kernel_weight
    right = modes * w[:, None]
    T = HaarOperator(N, [DiagPermTerm((1.0 - kernel_weight) * lam), LowRankTerm(left, right)],
                     f"random:seed={seed}")
    if p == 2.0:
        est = opnorm(T, 2.0, seed=seed)
        scale = est.upper_bound
    else:
        scale = upper_bound(T, p)
    if scale <= 0:
        return T
    out = T * (1.0 / scale)
    if p == 2.0:
        witness = None if est.witness is None else est.witness.copy()
        out.norm_cache[2.0] = OperatorNormEstimate(
            2.0, est.lower_bound / scale, est.upper_bound / scale, est.method, est.converged,
            witness)
    return out


def permutation_of_haar(N: int, seed: int) -> HaarOperator:
    rng = np.random.default_rng(seed)
    perm = np.concatenate([rng.permutation(np.arange(level_slice(n).start, level_slice(n).stop))
                           for n in range(N + 1)])
    return HaarOperator(N, [DiagPermTerm(np.ones(dimension(N)), perm)], f"perm:seed={seed}")


def load_operator(path: str | Path) -> HaarOperator:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DomainError(f"cannot read operator file {path}: {exc}") from exc
    if path.suffix.lower() == ".csv":
        try:
            rows = [[float(v) for v in row] for row in csv.reader(io.StringIO(text)) if row]
        except ValueError as exc:
            raise DomainError(f"malformed CSV operator: {exc}") from exc
        return dense(np.array(rows), "file")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DomainError(f"malformed operator JSON: {exc}") from exc
    return HaarOperator.from_json(data)


def generate(kind: str, N: int, seed: int = 0, p: float = 2.0) -> HaarOperator:
    """Build an operator from a generator string (``identity``, ``random:seed=3``, ...)."""
    spec = parse_spec(kind)
    seed = int(spec.params.get("seed", seed))
    if spec.kind == "identity":
        return identity(N)
    if spec.kind == "zero":
        return zero(N)
    if spec.kind == "haar_multiplier":
        dist = spec.args[0] if spec.args else "bernoulli(0.5)"
        rng = np.random.default_rng(seed)
        return multiplier(_draw_multiplier(dist, dimension(N), rng), f"multiplier:{dist}:seed={seed}")
    if spec.kind == "random_contraction":
        rank = int(spec.params.get("rank", 2))
        weight = spec.params.get("weight")
        weight = None if weight is None else float(weight)
        return random_contraction(N, seed, p, rank=rank, kernel_weight=weight)
    if spec.kind == "permutation_of_haar":
        return permutation_of_haar(N, seed)
    op = load_operator(spec.args[0])
    if op.N != N:
        raise DomainError(f"operator file has N={op.N}, expected {N}")
    return op
