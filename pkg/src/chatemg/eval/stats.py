"""Rank-sum test and reconstruction error."""
from __future__ import annotations

import math
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from ..errors import InvalidArgument

EXACT_MAX_N = 12
ALPHA = 0.05


@lru_cache(maxsize=None)
def _u_counts(n1: int, n2: int) -> tuple:
    """Number of rank arrangements giving each U in 0..n1*n2 (tie-free null)."""
    # f[a][b] is the count vector for sample sizes (a, b); built bottom-up
    f = [[None] * (n2 + 1) for _ in range(n1 + 1)]
    for a in range(n1 + 1):
        for b in range(n2 + 1):
            size = a * b + 1
            if a == 0 or b == 0:
                v = np.zeros(size, dtype=object)
                v[0] = 1
            else:
                v = np.zeros(size, dtype=object)
                # largest rank belongs to x (adds b to U) or to y (adds nothing)
                left = f[a - 1][b]
                v[b:b + left.size] += left
                down = f[a][b - 1]
                v[:down.size] += down
            f[a][b] = v
    return tuple(int(c) for c in f[n1][n2])


def exact_sf(u: float, n1: int, n2: int) -> float:
    """P(U >= u) under the tie-free null."""
    counts = _u_counts(n1, n2)
    k = max(0, math.ceil(u - 1e-9))
    return sum(counts[k:]) / math.comb(n1 + n2, n1)


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def wilcoxon_rank_sum_one_sided(x: Sequence[float], y: Sequence[float]) -> float:
    """One-sided rank-sum (Mann-Whitney) p-value for H1: x tends to be larger than y.

    Exact null enumeration when len(x) + len(y) <= 12 and there are no ties,
    otherwise a normal approximation with tie and continuity corrections.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size == 0 or y.size == 0:
        raise InvalidArgument("both samples must be non-empty")
    n1, n2 = x.size, y.size
    ranks = rankdata(np.concatenate([x, y]))
    u = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    ties = np.unique(ranks).size < ranks.size
    if n1 + n2 <= EXACT_MAX_N and not ties:
        return exact_sf(u, n1, n2)
    n = n1 + n2
    _, t = np.unique(ranks, return_counts=True)
    tie_term = float((t ** 3 - t).sum()) / (n * (n - 1)) if n > 1 else 0.0
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return 1.0
    z = (u - n1 * n2 / 2.0 - 0.5) / math.sqrt(var)
    return max(_normal_sf(z), np.finfo(float).tiny)


def nrmse(synthetic: np.ndarray, real: np.ndarray, prompt_len: int = 150, value_range: float = 1000.0) -> float:
    """RMSE over the generated rows (prompt_len onward, all channels) divided by ``value_range``."""
    s = np.asarray(synthetic, dtype=np.float64)
    r = np.asarray(real, dtype=np.float64)
    if s.shape != r.shape:
        raise InvalidArgument(f"shape mismatch: {s.shape} vs {r.shape}")
    if s.ndim != 2 or not 0 <= prompt_len < s.shape[0]:
        raise InvalidArgument("expected (T, C) windows with prompt_len < T")
    diff = s[prompt_len:] - r[prompt_len:]
    return float(np.sqrt(np.mean(diff ** 2)) / value_range)
