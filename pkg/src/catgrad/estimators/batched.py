"""Estimators for a batch of independent categorical products.

Used by the neural pipelines, where every example ``b`` has its own logits
``logits[b]`` of shape (D, K) and its own function ``f(b, x)``.  ``f`` is
called once per estimate on an int array of shape (B, M, D) and returns
(B, M) values.  The random stream is consumed exactly like the
factorisation-level estimators with ``trials=B``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..categorical import inverse_cdf, softmax
from .factored import _check_n, _check_tau, _relaxed_softmax_vjp, gumbel_noise


@dataclass
class BatchEstimate:
    grad: np.ndarray          # d E[f] / d logits, (B, D, K)
    value: np.ndarray         # estimate of E[f] per example, (B,)
    samples: np.ndarray       # base samples, (B, N, D)
    samples_drawn: int        # per example
    function_evals: int       # per example


def _sample(p: np.ndarray, n: int, rng) -> np.ndarray:
    B, D, _ = p.shape
    u = rng.random((B, n, D))
    return inverse_cdf(p[:, None, :, :], u)


def _score_weighted(p: np.ndarray, x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """sum_n w[b, n] * (onehot(x[b, n]) - p[b]), shape (B, D, K)."""
    K = p.shape[-1]
    onehot = (x[..., None] == np.arange(K)).astype(np.float64)
    return np.einsum("bn,bndk->bdk", w, onehot) - w.sum(axis=1)[:, None, None] * p


def reinforce_batched(logits, f, n: int, rng) -> BatchEstimate:
    _check_n(n)
    p = softmax(logits)
    x = _sample(p, n, rng)
    F = f(x)
    return BatchEstimate(_score_weighted(p, x, F / n), F.mean(axis=1), x, n, n)


def rloo_batched(logits, f, n: int, rng) -> BatchEstimate:
    if n < 2:
        raise ValueError("RLOO requires at least two samples")
    p = softmax(logits)
    x = _sample(p, n, rng)
    F = f(x)
    shifted = F - F[:, :1]
    adv = (shifted - shifted.mean(axis=1, keepdims=True)) * (n / (n - 1))
    return BatchEstimate(_score_weighted(p, x, adv / n), F.mean(axis=1), x, n, n)


def indecater_batched(logits, f, n: int, rng,
                      fresh_per_variable: bool = False) -> BatchEstimate:
    _check_n(n)
    p = softmax(logits)
    B, D, K = p.shape
    if fresh_per_variable:
        base = np.stack([_sample(p, n, rng) for _ in range(D)], axis=1)
    else:
        base = np.broadcast_to(_sample(p, n, rng)[:, None], (B, D, n, D))
    # xs[b, d, k, n, :] = base[b, d, n] with column d set to k
    xs = np.repeat(base[:, :, None], K, axis=2).copy()
    cols = np.arange(D)
    xs[:, cols, :, :, cols] = np.arange(K)[:, None]
    F = f(xs.reshape(B, D * K * n, D)).reshape(B, D, K, n).mean(axis=3)
    inner = (p * F).sum(axis=2, keepdims=True)
    grad = p * (F - inner)
    drawn = n * D if fresh_per_variable else n
    return BatchEstimate(grad, inner[..., 0].mean(axis=1), base[:, 0], drawn, D * K * n)


def gumbel_softmax_batched(logits, f_relaxed, n: int, tau: float, rng) -> BatchEstimate:
    """Pathwise gradient through softmax((logits + g) / tau).

    ``f_relaxed`` maps relaxed samples (B, N, D, K) to values (B, N) and
    their gradient (B, N, D, K).  Non-finite gradient entries are zeroed.
    """
    _check_tau(tau)
    _check_n(n)
    logits = np.asarray(logits, dtype=np.float64)
    B, D, K = logits.shape
    g = gumbel_noise(rng, (B, n, D, K))
    y = softmax((logits[:, None] + g) / tau)
    vals, gy = f_relaxed(y)
    grad = _relaxed_softmax_vjp(y, gy, tau).mean(axis=1)
    grad = np.where(np.isfinite(grad), grad, 0.0)
    return BatchEstimate(grad, np.asarray(vals).mean(axis=1), y.argmax(-1), n, n)
