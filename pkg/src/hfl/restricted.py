"""Factoring the identity through a matrix on sequence space by restricted invertibility.

Split coordinates by |(T e_i, e_i)| >= 1/2, keep the larger side (T or
Id - T), rescale to unit diagonal S = P1 H E1 and greedily select sigma so that
R_sigma S R_sigma stays well invertible: smallest singular value >= 1/2,
equivalently ||(R_sigma S R_sigma)^-1||_2 <= 2. Then P2 = (R_sigma S R_sigma)^-1 R_sigma
and E2 = inclusion give P2 P1 H E1 E2 = Id on the selected coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, PreconditionError
from .operators import riesz_thorin


def _smin(M: np.ndarray) -> float:
    if M.size == 0:
        return math.inf
    return float(np.linalg.svd(M, compute_uv=False)[-1])


def matrix_lp_norm(M: np.ndarray, p: float) -> float:
    """||M||_{l^p -> l^p}: exact at p = 2, Riesz-Thorin upper bound otherwise."""
    if M.size == 0:
        return 0.0
    if p == 2.0:
        return float(np.linalg.norm(M, 2))
    absM = np.abs(M)
    return riesz_thorin(float(absM.sum(axis=0).max()), float(absM.sum(axis=1).max()), p)


@dataclass
class RestrictedInvertibilityResult:
    N: int
    p: float
    branch: str
    diagonal_family: tuple        # coordinates with |(H e_i, e_i)| >= 1/2
    S: np.ndarray
    sigma: tuple                  # positions within the diagonal family
    min_singular_value: float
    inverse_norm: float
    restricted_norm: float        # ||R_sigma S R_sigma||_p (upper bound unless p = 2)
    E1: np.ndarray
    P1: np.ndarray
    E2: np.ndarray
    P2: np.ndarray
    chain_error: float
    norm_E: float
    norm_P: float
    eps: float | None = None
    history: list = field(default_factory=list)

    @property
    def coordinates(self) -> tuple:
        """Selected coordinates of the original space."""
        return tuple(self.diagonal_family[s] for s in self.sigma)

    def to_json(self) -> dict:
        return {"N": self.N, "p": self.p, "branch": self.branch,
                "diagonal_family": list(self.diagonal_family),
                "sigma": list(self.sigma), "coordinates": list(self.coordinates),
                "min_singular_value": self.min_singular_value,
                "inverse_norm": self.inverse_norm, "restricted_norm": self.restricted_norm,
                "chain_error": self.chain_error, "norm_E": self.norm_E, "norm_P": self.norm_P,
                "norm_kind": "exact" if self.p == 2.0 else "riesz-thorin-upper",
                "eps": self.eps, "history": self.history}


def greedy_selection(S: np.ndarray, floor: float = 0.5, max_norm: float | None = None):
    """Grow sigma one index at a time, maximizing the smallest singular value.

    Stops when every unused index would push it below ``floor`` (or the norm of
    the restricted matrix above ``max_norm``), so the result is inclusion-maximal.
    """
    n = S.shape[0]
    sigma: list[int] = []
    history = []
    unused = list(range(n))
    while unused:
        best, best_val = None, -1.0
        for i in unused:
            idx = sigma + [i]
            sub = S[np.ix_(idx, idx)]
            val = _smin(sub)
            if val < floor:
                continue
            if max_norm is not None and float(np.linalg.norm(sub, 2)) > max_norm:
                continue
            if val > best_val:
                best, best_val = i, val
        if best is None:
            break
        sigma.append(best)
        unused.remove(best)
        history.append({"added": best, "min_singular_value": best_val})
    return sorted(sigma), history


def restricted_invertibility(T: np.ndarray, p: float = 2.0, eps: float | None = None
                             ) -> RestrictedInvertibilityResult:
    T = np.asarray(T, dtype=float)
    if T.ndim != 2 or T.shape[0] != T.shape[1] or T.shape[0] == 0:
        raise DomainError("need a nonempty square matrix")
    if not 1 < p < math.inf:
        raise PreconditionError("p must lie in (1, inf)")
    if not np.all(np.isfinite(T)):
        raise DomainError("matrix entries must be finite")
    N = T.shape[0]
    diag = np.diag(T)
    in_L = np.abs(diag) >= 0.5
    branch = "T" if in_L.sum() >= N - in_L.sum() else "Id-T"
    H = T if branch == "T" else np.eye(N) - T
    family = np.flatnonzero(np.abs(np.diag(H)) >= 0.5)
    assert 2 * len(family) >= N, "one of the two diagonal families must hold half"
    N1 = len(family)
    E1 = np.zeros((N, N1))
    E1[family, np.arange(N1)] = 1.0
    P1 = E1.T / np.diag(H)[family][:, None]
    S = P1 @ H @ E1
    sigma, history = greedy_selection(S, 0.5, None if eps is None else 1.0 + eps)
    N2 = len(sigma)
    E2 = np.zeros((N1, N2))
    E2[sigma, np.arange(N2)] = 1.0
    restricted = S[np.ix_(sigma, sigma)]
    P2 = np.linalg.solve(restricted, E2.T) if N2 else np.zeros((0, N1))
    chain = P2 @ P1 @ H @ E1 @ E2
    err = float(np.max(np.abs(chain - np.eye(N2)))) if N2 else 0.0
    smin = _smin(restricted) if N2 else math.inf
    return RestrictedInvertibilityResult(
        N=N, p=float(p), branch=branch, diagonal_family=tuple(int(i) for i in family), S=S,
        sigma=tuple(int(s) for s in sigma), min_singular_value=smin,
        inverse_norm=1.0 / smin if N2 else 0.0,
        restricted_norm=matrix_lp_norm(restricted, p), E1=E1, P1=P1, E2=E2, P2=P2,
        chain_error=err, norm_E=matrix_lp_norm(E1 @ E2, p), norm_P=matrix_lp_norm(P2 @ P1, p),
        eps=eps, history=history)


def perturbed_identity(N: int, seed: int, scale: float = 0.5) -> np.ndarray:
    """Id + scale * G / sqrt(N) with Gaussian G, divided down to spectral radius <= 1."""
    rng = np.random.default_rng(seed)
    A = np.eye(N) + scale * rng.standard_normal((N, N)) / math.sqrt(N)
    rho = float(np.max(np.abs(np.linalg.eigvals(A))))
    return A / max(1.0, rho)
