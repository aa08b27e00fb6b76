"""Slow reference computations used to cross-check the fast paths."""

from __future__ import annotations

import numpy as np

from .dyadic import DyadicInterval
from .haar import StepFunction, lp_norm


def haar_pairings_at_level(f: StepFunction, level: int) -> np.ndarray:
    """<f, h_J> for every J of the given level, by direct left-minus-right cell sums."""
    R = max(f.resolution, level + 1)
    values = f.refine(R).values.reshape(1 << level, 2, -1)
    return (values[:, 0].sum(axis=1) - values[:, 1].sum(axis=1)) / (1 << R)


def sparse_level_scan(x: StepFunction, y: StepFunction, I: DyadicInterval, k: int, ell: int,
                      max_depth: int):
    """Minimal j in [1, max_depth] whose bad set below I has measure <= |I| / ell.

    Bad: |<x, h_J>| + |<y, h_J>| > |J| / k. Returns (j, count) or (None, counts).
    """
    counts = []
    for j in range(1, max_depth + 1):
        level = I.level + j
        px = haar_pairings_at_level(x, level)
        py = haar_pairings_at_level(y, level)
        first = (I.index - 1) << j
        sl = slice(first, first + (1 << j))
        size = 2.0 ** -level
        bad = np.abs(px[sl]) + np.abs(py[sl]) > size / k
        count = int(bad.sum())
        counts.append(count)
        if count * size <= float(I.measure) / ell:
            return j, counts
    return None, counts


def admissible(x: StepFunction, y: StepFunction, I: DyadicInterval, p: float) -> bool:
    q = p / (p - 1)
    m = float(I.measure)
    return (lp_norm(x, p) <= m ** (1 / p) * (1 + 1e-12)
            and lp_norm(y, q) <= m ** (1 / q) * (1 + 1e-12))


def dense_weighted_norm(M: np.ndarray, w_in: np.ndarray, w_out: np.ndarray) -> float:
    """Largest singular value of W_out^1/2 M W_in^-1/2."""
    a = np.sqrt(w_out)[:, None] * M / np.sqrt(w_in)[None, :]
    return float(np.linalg.svd(a, compute_uv=False)[0]) if a.size else 0.0


def square_function_direct(f: StepFunction, N: int) -> np.ndarray:
    """S(f) on cells from per-level pairings, with no fast transform."""
    R = max(f.resolution, N + 1)
    squares = np.zeros(1 << R)
    for level in range(N + 1):
        c = haar_pairings_at_level(f, level) * (1 << level)
        squares += np.repeat(c ** 2, 1 << (R - level))
    return np.sqrt(squares)

