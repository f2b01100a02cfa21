"""Exact t-SNE (dense affinities, O(n^2)) for small sample sets."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from ..errors import InvalidArgument


@dataclass
class TSNEResult:
    embedding: np.ndarray
    kl: List[float] = field(default_factory=list)   # KL(P||Q) after each iteration, unexaggerated P


def _sq_distances(X: np.ndarray) -> np.ndarray:
    sq = np.sum(X * X, axis=1)
    D = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    np.fill_diagonal(D, 0.0)
    return np.maximum(D, 0.0)


def conditional_affinities(D: np.ndarray, perplexity: float, tol: float = 1e-5,
                           max_iter: int = 100) -> np.ndarray:
    """Row-stochastic P(j|i) with each row's Gaussian precision bisected to the target perplexity."""
    n = D.shape[0]
    target = np.log(perplexity)
    P = np.zeros((n, n))
    for i in range(n):
        d = np.delete(D[i], i)
        d = d - d.min()
        beta, lo, hi = 1.0, 0.0, np.inf
        for _ in range(max_iter):
            w = np.exp(-d * beta)
            s = w.sum()
            p = w / s
            H = np.log(s) + beta * np.sum(d * p)
            if abs(H - target) < tol:
                break
            if H > target:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else 0.5 * (beta + hi)
            else:
                hi = beta
                beta = 0.5 * (beta + lo)
        P[i, np.arange(n) != i] = p
    return P


def joint_affinities(X: np.ndarray, perplexity: float = 30.0) -> np.ndarray:
    P = conditional_affinities(_sq_distances(X), perplexity)
    P = (P + P.T) / (2.0 * P.shape[0])
    return np.maximum(P, 1e-12)


def _q(Y: np.ndarray):
    num = 1.0 / (1.0 + _sq_distances(Y))
    np.fill_diagonal(num, 0.0)
    return num / num.sum(), num


def kl_divergence(P: np.ndarray, Y: np.ndarray) -> float:
    Q, _ = _q(Y)
    Q = np.maximum(Q, 1e-12)
    mask = ~np.eye(P.shape[0], dtype=bool)
    return float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))


def tsne(X, perplexity: float = 30.0, iters: int = 1000, rng_seed: int = 0, learning_rate: float = 200.0,
         exaggeration: float = 12.0, exaggeration_iters: int = 250, momentum: float = 0.5,
         final_momentum: float = 0.8, min_gain: float = 0.01) -> TSNEResult:
    """Embed rows of X into 2D.

    Plain gradient descent with momentum and per-coordinate adaptive gains;
    P is multiplied by ``exaggeration`` for the first ``exaggeration_iters``
    iterations, where momentum also switches to ``final_momentum``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 3:
        raise InvalidArgument("t-SNE needs at least 3 samples of equal length")
    n = X.shape[0]
    P = joint_affinities(X, perplexity)
    rng = np.random.default_rng(rng_seed)
    Y = rng.normal(0.0, 1e-4, size=(n, 2))
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    kl = []
    for it in range(iters):
        exag = exaggeration if it < exaggeration_iters else 1.0
        mom = momentum if it < exaggeration_iters else final_momentum
        Q, num = _q(Y)
        PQ = (exag * P - Q) * num
        np.fill_diagonal(PQ, 0.0)
        grad = 4.0 * (np.diag(PQ.sum(axis=1)) - PQ) @ Y
        same = np.sign(grad) == np.sign(update)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, min_gain)
        update = mom * update - learning_rate * gains * grad
        Y = Y + update
        Y = Y - Y.mean(axis=0)
        kl.append(kl_divergence(P, Y))
    return TSNEResult(Y, kl)


def tsne_embed(samples, perplexity: float = 30.0, iters: int = 1000, rng_seed: int = 0) -> np.ndarray:
    """(n, 2) coordinates for n equal-length sequences."""
    return tsne(samples, perplexity, iters, rng_seed).embedding
