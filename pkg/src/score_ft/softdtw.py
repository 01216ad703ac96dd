"""Soft-DTW, its analytic gradient, the normalized divergence, and hard DTW.

The DP tables use 1-based cells: row/column 0 is the boundary, so
``R[i, j]`` is the accumulated cost of aligning ``x[:i]`` with ``y[:j]``.
Infinite boundary cells hold the sentinel ``BIG`` (1e30).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from numba import njit

from .core import AlignmentPath, as_frames

__all__ = [
    "BIG",
    "SoftDtwConfig",
    "SoftDtwResult",
    "SubsequenceMatch",
    "pairwise_sq_dists",
    "soft_min",
    "soft_dtw",
    "soft_dtw_value",
    "enumerate_paths",
    "delannoy",
    "brute_force_soft_dtw",
    "hard_dtw",
    "subsequence_dtw",
    "normalized_divergence",
]

BIG = 1e30
BRUTE_FORCE_MAX_LEN = 8


@dataclass(frozen=True)
class SoftDtwConfig:
    gamma: float = 0.1
    distance: str = "squared_euclidean"

    def __post_init__(self):
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ValueError(f"gamma must be a positive finite number, got {self.gamma}")
        if self.distance != "squared_euclidean":
            raise ValueError(f"unsupported distance {self.distance!r}")


@dataclass(frozen=True, eq=False)
class SoftDtwResult:
    value: float
    dp_table: np.ndarray  # (m+1, n+1)
    alignment: np.ndarray  # (m, n) expected alignment E
    grad_x: np.ndarray
    grad_y: np.ndarray


def _pair(x, y) -> Tuple[np.ndarray, np.ndarray]:
    x, y = as_frames(x), as_frames(y)
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"feature dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    return x, y


def pairwise_sq_dists(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, shape ``(len(x), len(y))``.

    Computed by explicit differences rather than the Gram expansion so that
    identical frames give exactly zero.
    """
    diff = x[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def soft_min(values, gamma: float) -> float:
    """``-gamma * log(sum(exp(-a / gamma)))``, shifted by the minimum for stability."""
    a = np.asarray(values, dtype=np.float64).ravel()
    if a.size == 0:
        raise ValueError("soft_min of an empty sequence")
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    lo = a.min()
    return float(lo - gamma * np.log(np.sum(np.exp(-(a - lo) / gamma))))


@njit(cache=True)
def _soft_min3(a, b, c, gamma):
    lo = min(a, b, c)
    s = math.exp(-(a - lo) / gamma) + math.exp(-(b - lo) / gamma) + math.exp(-(c - lo) / gamma)
    return lo - gamma * math.log(s)


@njit(cache=True)
def _forward(delta, gamma):
    m, n = delta.shape
    R = np.full((m + 1, n + 1), BIG)
    R[0, 0] = 0.0
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            R[i, j] = delta[i - 1, j - 1] + _soft_min3(R[i - 1, j], R[i, j - 1], R[i - 1, j - 1], gamma)
    return R


@njit(cache=True)
def _backward(delta, R, gamma):
    # E[i, j] = d R[m, n] / d delta[i, j]; accumulated from the three successors.
    m, n = delta.shape
    E = np.zeros((m + 2, n + 2))
    E[m, n] = 1.0
    for i in range(m, 0, -1):
        for j in range(n, 0, -1):
            if i == m and j == n:
                continue
            r = R[i, j]
            acc = 0.0
            if i < m:
                acc += math.exp((R[i + 1, j] - r - delta[i, j - 1]) / gamma) * E[i + 1, j]
            if j < n:
                acc += math.exp((R[i, j + 1] - r - delta[i - 1, j]) / gamma) * E[i, j + 1]
            if i < m and j < n:
                acc += math.exp((R[i + 1, j + 1] - r - delta[i, j]) / gamma) * E[i + 1, j + 1]
            E[i, j] = acc
    return E[1:m + 1, 1:n + 1]


def soft_dtw(x, y, cfg: SoftDtwConfig = SoftDtwConfig()) -> SoftDtwResult:
    """Soft-DTW value with gradients for both sequences."""
    x, y = _pair(x, y)
    delta = pairwise_sq_dists(x, y)
    R = _forward(delta, cfg.gamma)
    E = _backward(delta, R, cfg.gamma)
    # d delta[i, j] / d x_i = 2 (x_i - y_j)
    grad_x = 2.0 * (E.sum(axis=1)[:, None] * x - E @ y)
    grad_y = 2.0 * (E.sum(axis=0)[:, None] * y - E.T @ x)
    return SoftDtwResult(float(R[-1, -1]), R, E, grad_x, grad_y)


def soft_dtw_value(x, y, cfg: SoftDtwConfig = SoftDtwConfig()) -> float:
    """Forward pass only."""
    x, y = _pair(x, y)
    return float(_forward(pairwise_sq_dists(x, y), cfg.gamma)[-1, -1])


def delannoy(m: int, n: int) -> int:
    """Number of monotonic paths from (1, 1) to (m, n) with unit steps."""
    table = [[1] * n for _ in range(m)]
    for i in range(1, m):
        for j in range(1, n):
            table[i][j] = table[i - 1][j] + table[i][j - 1] + table[i - 1][j - 1]
    return table[m - 1][n - 1]


def enumerate_paths(m: int, n: int) -> List[AlignmentPath]:
    """Every alignment path through an m x n grid (exponential; keep m, n small)."""
    out = []

    def extend(prefix):
        i, j = prefix[-1]
        if (i, j) == (m, n):
            out.append(AlignmentPath(tuple(prefix)))
            return
        for di, dj in ((1, 0), (0, 1), (1, 1)):
            if i + di <= m and j + dj <= n:
                prefix.append((i + di, j + dj))
                extend(prefix)
                prefix.pop()

    extend([(1, 1)])
    return out


def brute_force_soft_dtw(x, y, cfg: SoftDtwConfig = SoftDtwConfig()) -> float:
    """Soft-min over the costs of every alignment path. Test oracle."""
    x, y = _pair(x, y)
    m, n = x.shape[0], y.shape[0]
    if m > BRUTE_FORCE_MAX_LEN or n > BRUTE_FORCE_MAX_LEN:
        raise ValueError(f"brute force limited to lengths <= {BRUTE_FORCE_MAX_LEN}, got {m} x {n}")
    delta = pairwise_sq_dists(x, y)
    costs = [p.cost(delta) for p in enumerate_paths(m, n)]
    return soft_min(costs, cfg.gamma)


@njit(cache=True)
def _hard_forward(delta, free_start):
    m, n = delta.shape
    D = np.full((m + 1, n + 1), np.inf)
    D[0, 0] = 0.0
    if free_start:
        D[0, :] = 0.0
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            D[i, j] = delta[i - 1, j - 1] + min(D[i - 1, j - 1], D[i - 1, j], D[i, j - 1])
    return D


def _traceback(D: np.ndarray, j_end: int, free_start: bool) -> List[Tuple[int, int]]:
    i, j = D.shape[0] - 1, j_end
    steps = [(i, j)]
    while True:
        if i == 1 and (free_start or j == 1):
            break
        candidates = ((D[i - 1, j - 1], i - 1, j - 1), (D[i - 1, j], i - 1, j), (D[i, j - 1], i, j - 1))
        best = min(c[0] for c in candidates)
        # fixed tie-break: diagonal, vertical, horizontal
        for cost, ni, nj in candidates:
            if cost == best and ni >= 1 and nj >= 1:
                i, j = ni, nj
                break
        steps.append((i, j))
    steps.reverse()
    return steps


def hard_dtw(x, y) -> Tuple[float, AlignmentPath]:
    """Classic DTW: minimum path cost and one optimal path."""
    x, y = _pair(x, y)
    D = _hard_forward(pairwise_sq_dists(x, y), False)
    return float(D[-1, -1]), AlignmentPath(tuple(_traceback(D, D.shape[1] - 1, False)))


@dataclass(frozen=True)
class SubsequenceMatch:
    value: float  # best cost / query length
    cost: float
    start: int  # 0-based document frame, inclusive
    end: int  # 0-based document frame, exclusive


def subsequence_dtw(query, doc) -> SubsequenceMatch:
    """DTW with free start and end along the document axis."""
    q, d = _pair(query, doc)
    D = _hard_forward(pairwise_sq_dists(q, d), True)
    last = D[-1, 1:]
    j_end = int(np.argmin(last)) + 1
    cost = float(last[j_end - 1])
    steps = _traceback(D, j_end, True)
    return SubsequenceMatch(cost / q.shape[0], cost, steps[0][1] - 1, j_end)


def normalized_divergence(x, y, cfg: SoftDtwConfig = SoftDtwConfig(),
                          length_norm: bool = True) -> Tuple[float, np.ndarray, np.ndarray]:
    """``L(x, y) - (L(x, x) + L(y, y)) / 2``, optionally divided by ``m + n``.

    Returns ``(value, grad_x, grad_y)``. The self terms contribute through
    both of their slots.
    """
    x, y = _pair(x, y)
    xy = soft_dtw(x, y, cfg)
    xx = soft_dtw(x, x, cfg)
    yy = soft_dtw(y, y, cfg)
    value = xy.value - 0.5 * (xx.value + yy.value)
    grad_x = xy.grad_x - 0.5 * (xx.grad_x + xx.grad_y)
    grad_y = xy.grad_y - 0.5 * (yy.grad_x + yy.grad_y)
    if length_norm:
        scale = 1.0 / (x.shape[0] + y.shape[0])
        value, grad_x, grad_y = value * scale, grad_x * scale, grad_y * scale
    return value, grad_x, grad_y
