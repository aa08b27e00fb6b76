"""Step functions on dyadic grids, Haar expansions, L^p / dyadic H^1 norms.

Haar functions are L-infinity normalized: h_I = +1 on the left half of I and -1
on the right half. A Haar expansion stores c_I = <f, h_I> / |I| so that
f - mean(f) = sum c_I h_I. Coefficient vectors are indexed by canonical index
minus one (level 0 first, then left to right within each level).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .config import max_level
from .dyadic import DyadicInterval, canonical_index, from_canonical
from .errors import DomainError, PreconditionError, ResourceLimitError


def dimension(N: int) -> int:
    """Number of Haar functions with |I| >= 2^-N."""
    return (1 << (N + 1)) - 1


def level_of_position(N: int) -> np.ndarray:
    return np.concatenate([np.full(1 << n, n) for n in range(N + 1)])


def interval_weights(N: int) -> np.ndarray:
    """|I| for every position of a level-N coefficient vector."""
    return np.concatenate([np.full(1 << n, 2.0 ** -n) for n in range(N + 1)])


def position(I: DyadicInterval) -> int:
    return canonical_index(I) - 1


def level_slice(n: int) -> slice:
    return slice((1 << n) - 1, (1 << (n + 1)) - 1)


def _check_resolution(R: int) -> None:
    if R > max_level() + 1:
        raise ResourceLimitError(f"resolution {R} exceeds MAX_LEVEL + 1 = {max_level() + 1}")


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Values on the 2^R cells [i 2^-R, (i+1) 2^-R) of [0, 1)."""

    resolution: int
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (1 << self.resolution,):
            raise DomainError(f"expected {1 << self.resolution} values, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DomainError("step function values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, resolution: int) -> "StepFunction":
        return cls(resolution, np.zeros(1 << resolution))

    def refine(self, resolution: int) -> "StepFunction":
        """Same function on a finer grid (cell replication; exact)."""
        if resolution < self.resolution:
            raise DomainError("cannot coarsen a step function")
        if resolution == self.resolution:
            return self
        _check_resolution(resolution)
        return StepFunction(resolution, np.repeat(self.values, 1 << (resolution - self.resolution)))

    def _aligned(self, other: "StepFunction"):
        R = max(self.resolution, other.resolution)
        return R, self.refine(R).values, other.refine(R).values

    def __add__(self, other):
        R, a, b = self._aligned(other)
        return StepFunction(R, a + b)

    def __sub__(self, other):
        R, a, b = self._aligned(other)
        return StepFunction(R, a - b)

    def __mul__(self, scalar):
        return StepFunction(self.resolution, self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return StepFunction(self.resolution, -self.values)

    def mean(self) -> float:
        return float(self.values.mean())

    def to_json(self) -> dict:
        return {"resolution": self.resolution, "values": [float(v) for v in self.values]}

    @classmethod
    def from_json(cls, data: dict) -> "StepFunction":
        return cls(int(data["resolution"]), np.asarray(data["values"], dtype=float))


def indicator(I: DyadicInterval, resolution: int | None = None) -> StepFunction:
    R = I.level if resolution is None else resolution
    values = np.zeros(1 << R)
    a, b = I.cell_range(R)
    values[a:b] = 1.0
    return StepFunction(R, values)


def haar_function(I: DyadicInterval, resolution: int | None = None) -> StepFunction:
    R = I.level + 1 if resolution is None else resolution
    if R <= I.level:
        raise DomainError(f"resolution {R} cannot resolve the halves of {I.literal}")
    _check_resolution(R)
    values = np.zeros(1 << R)
    a, b = I.cell_range(R)
    mid = (a + b) // 2
    values[a:mid] = 1.0
    values[mid:b] = -1.0
    return StepFunction(R, values)


def inner(f: StepFunction, g: StepFunction) -> float:
    """L^2 pairing by exact cell quadrature."""
    R, a, b = f._aligned(g)
    return float(np.dot(a, b)) / (1 << R)


@dataclass(frozen=True, eq=False)
class HaarExpansion:
    """Coefficients c_I, I in D_N, relative to the L-infinity normalized Haar system."""

    N: int
    coefficients: np.ndarray

    def __post_init__(self):
        coeffs = np.asarray(self.coefficients, dtype=float)
        if coeffs.shape != (dimension(self.N),):
            raise DomainError(f"expected {dimension(self.N)} coefficients for N={self.N}")
        object.__setattr__(self, "coefficients", coeffs)

    def __getitem__(self, I: DyadicInterval) -> float:
        if I.level > self.N:
            return 0.0
        return float(self.coefficients[position(I)])

    def items(self):
        for j, c in enumerate(self.coefficients, start=1):
            yield from_canonical(j), float(c)

    def to_json(self) -> dict:
        return {"N": self.N,
                "coeffs": {I.literal: c for I, c in self.items() if c != 0.0}}

    @classmethod
    def from_json(cls, data: dict) -> "HaarExpansion":
        N = int(data["N"])
        coeffs = np.zeros(dimension(N))
        for literal, c in data["coeffs"].items():
            I = DyadicInterval.parse(literal)
            if I.level > N:
                raise DomainError(f"coefficient {literal} above level N={N}")
            coeffs[position(I)] = float(c)
        return cls(N, coeffs)


def coefficients_from_values(values: np.ndarray, N: int) -> np.ndarray:
    """Haar coefficients of cell values (cells along axis 0; extra axes are batched)."""
    means = np.asarray(values, dtype=float)
    R = means.shape[0].bit_length() - 1
    if R < N + 1:
        means = np.repeat(means, 1 << (N + 1 - R), axis=0)
        R = N + 1
    tail = means.shape[1:]
    by_level = []
    for n in range(R - 1, -1, -1):
        pairs = means.reshape((-1, 2) + tail)
        if n <= N:
            by_level.append((pairs[:, 0] - pairs[:, 1]) / 2.0)
        means = pairs.mean(axis=1)
    return np.concatenate(by_level[::-1], axis=0)


def haar_coefficients(f: StepFunction, N: int) -> np.ndarray:
    """c_I = <f, h_I>/|I| for I in D_N via pairwise means (finer detail is dropped)."""
    return coefficients_from_values(f.values, N)


def analyze(f: StepFunction, N: int) -> HaarExpansion:
    return HaarExpansion(N, haar_coefficients(f, N))


def synthesize_vector(coeffs: np.ndarray, N: int, resolution: int | None = None) -> np.ndarray:
    """Cell values of sum c_I h_I. Works column-wise on 2-d input."""
    coeffs = np.asarray(coeffs, dtype=float)
    tail = coeffs.shape[1:]
    values = np.zeros((1,) + tail)
    for n in range(N + 1):
        c = coeffs[level_slice(n)]
        values = np.repeat(values, 2, axis=0)
        values[0::2] += c
        values[1::2] -= c
    R = N + 1 if resolution is None else resolution
    if R < N + 1:
        raise DomainError("resolution too coarse for the expansion")
    if R > N + 1:
        values = np.repeat(values, 1 << (R - N - 1), axis=0)
    return values


def synthesize(expansion: HaarExpansion, resolution: int | None = None) -> StepFunction:
    R = expansion.N + 1 if resolution is None else resolution
    _check_resolution(R)
    return StepFunction(R, synthesize_vector(expansion.coefficients, expansion.N, R))


def square_function_values(coeffs: np.ndarray, N: int, resolution: int) -> np.ndarray:
    squares = np.zeros(1 << resolution)
    for n in range(N + 1):
        c2 = coeffs[level_slice(n)] ** 2
        squares += np.repeat(c2, 1 << (resolution - n))
    return np.sqrt(squares)


def square_function(f: StepFunction, N: int | None = None) -> StepFunction:
    """S(f) = (sum_I c_I^2 1_I)^(1/2) over I in D_N."""
    if N is None:
        N = max(f.resolution - 1, 0)
    R = max(f.resolution, N + 1)
    coeffs = haar_coefficients(f, N)
    return StepFunction(R, square_function_values(coeffs, N, R))


def lp_norm_values(values: np.ndarray, p: float) -> float:
    a = np.abs(values)
    if math.isinf(p):
        return float(a.max(initial=0.0))
    if p < 1:
        raise DomainError("p must be >= 1")
    mean = float(np.mean(a ** p))
    return mean ** (1.0 / p)


def lp_norm(f: StepFunction, p: float) -> float:
    return lp_norm_values(f.values, p)


def h1_norm(f: StepFunction, N: int | None = None) -> float:
    return lp_norm(square_function(f, N), 1.0)


def h1_norm_coefficients(coeffs: np.ndarray, N: int) -> float:
    return float(square_function_values(coeffs, N, N + 1).mean())


@dataclass(frozen=True)
class NormConstants:
    """Working constants C_p = p^2/(p-1), c_p = 1/C_p and the conjugate exponent."""

    p: float

    def __post_init__(self):
        if not 1 < self.p < math.inf:
            raise DomainError(f"p must lie in (1, inf), got {self.p}")

    @property
    def q(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def C_p(self) -> float:
        return self.p ** 2 / (self.p - 1.0)

    @property
    def c_p(self) -> float:
        return 1.0 / self.C_p

    @property
    def C_q(self) -> float:
        return self.q ** 2 / (self.q - 1.0)


class EquivalenceReport(NamedTuple):
    p: float
    ratio: float
    lower: float
    upper: float
    within: bool


def check_square_equivalence(f: StepFunction, p: float, N: int | None = None) -> EquivalenceReport:
    """Ratio ||S(f)||_p / ||f||_p against [c_p, C_p] (mean-zero part of f)."""
    const = NormConstants(p)
    if N is None:
        N = max(f.resolution - 1, 0)
    coeffs = haar_coefficients(f, N)
    R = max(f.resolution, N + 1)
    centered = synthesize_vector(coeffs, N, R)
    denom = lp_norm_values(centered, p)
    if denom == 0.0:
        raise DomainError("ratio undefined for the zero function")
    ratio = lp_norm_values(square_function_values(coeffs, N, R), p) / denom
    return EquivalenceReport(p, ratio, const.c_p, const.C_p, const.c_p <= ratio <= const.C_p)


class LowerL2Report(NamedTuple):
    lhs: float
    rhs: float
    holds: bool


def check_lower_l2(ys: Sequence[StepFunction], a: Sequence[float], N: int | None = None,
                   constant: float = 4.0) -> LowerL2Report:
    """(sum a_i^2 ||y_i||_{H^1}^2)^(1/2) <= constant * ||sum a_i y_i||_{H^1}.

    The y_i must have pairwise disjoint sets of nonzero Haar coefficients.
    """
    if len(ys) != len(a):
        raise DomainError("need one coefficient per function")
    if not ys:
        return LowerL2Report(0.0, 0.0, True)
    if N is None:
        N = max(y.resolution for y in ys) - 1
    coeffs = [haar_coefficients(y, N) for y in ys]
    support = np.zeros(dimension(N), dtype=bool)
    scale = max(float(np.max(np.abs(c), initial=0.0)) for c in coeffs)
    for c in coeffs:
        nz = np.abs(c) > 1e-12 * scale       # round-off from the transform is not support
        if np.any(support & nz):
            raise PreconditionError("functions are not disjointly supported over the Haar system")
        support |= nz
    lhs = math.sqrt(sum(ai ** 2 * h1_norm_coefficients(c, N) ** 2 for ai, c in zip(a, coeffs)))
    combined = sum(ai * c for ai, c in zip(a, coeffs))
    rhs = constant * h1_norm_coefficients(combined, N)
    return LowerL2Report(lhs, rhs, lhs <= rhs)
