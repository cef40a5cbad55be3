"""Score-function and relaxation gradient estimators over a :class:`Factorisation`.

Every estimator has a ``*_trials`` form that runs ``trials`` independent
repetitions in one vectorised pass and returns gradient tables with a
leading trial axis.  The single-shot functions are the ``trials=1`` case,
so both consume the random stream identically.

All score-based estimators drop the E[df/dtheta] term: f never depends on
the logits here.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..categorical import Factorisation, FunctionOracle, LogitTable, softmax

UNIFORM_CLAMP = 1e-12


@dataclass
class GradEstimate:
    grad: list
    samples_drawn: int
    function_evals: int
    meta: dict = field(default_factory=dict)

    def flat(self) -> np.ndarray:
        return np.concatenate([np.ravel(g) for g in self.grad]) if self.grad else np.zeros(0)


def _check_n(n: int, minimum: int = 1) -> None:
    if int(n) != n or n < minimum:
        raise ValueError(f"sample count must be an integer >= {minimum}, got {n}")


def _scatter(grad_d: np.ndarray, trial: np.ndarray, row: np.ndarray,
             contrib: np.ndarray) -> None:
    """grad_d[trial, row, :] += contrib, with repeated indices summed."""
    T, R, K = grad_d.shape
    if R == 1:
        grad_d[:, 0, :] += contrib.reshape(T, -1, K).sum(axis=1)
        return
    flat = trial * R + row
    for k in range(K):
        grad_d[:, :, k] += np.bincount(flat, weights=contrib[:, k],
                                       minlength=T * R).reshape(T, R)


def _draw(fact: Factorisation, n: int, trials: int, rng) -> tuple:
    u = rng.random((trials, n, fact.n_vars)).reshape(trials * n, fact.n_vars)
    return u, fact.sample_from_uniforms(u)


def _accumulate_scores(fact: Factorisation, x: np.ndarray, weights: np.ndarray,
                       trials: int) -> list:
    """sum_n weights_n * dlog p(x_n) per trial."""
    grads = fact.zeros_like_params((trials,))
    trial = np.repeat(np.arange(trials), len(x) // trials)
    idx = np.zeros(len(x), dtype=np.int64)
    rows = np.arange(len(x))
    for d, k in enumerate(fact.cards):
        p = fact.probs[d][idx]
        contrib = -weights[:, None] * p
        contrib[rows, x[:, d]] += weights
        _scatter(grads[d], trial, idx, contrib)
        if not fact.is_independent:
            idx = idx * k + x[:, d]
    return grads


def reinforce_trials(fact: Factorisation, f: FunctionOracle, n: int, rng,
                     trials: int = 1) -> list:
    _check_n(n)
    _, x = _draw(fact, n, trials, rng)
    fx = f.batch(x)
    return _accumulate_scores(fact, x, fx / n, trials)


def rloo_trials(fact: Factorisation, f: FunctionOracle, n: int, rng,
                trials: int = 1) -> list:
    if n < 2:
        raise ValueError("RLOO requires at least two samples")
    _check_n(n, 2)
    _, x = _draw(fact, n, trials, rng)
    fx = f.batch(x).reshape(trials, n)
    # f_n - mean_{m != n} f_m == n/(n-1) * (f_n - mean f); shifting by the
    # first sample first keeps a constant f exactly zero
    shifted = fx - fx[:, :1]
    adv = (shifted - shifted.mean(axis=1, keepdims=True)) * (n / (n - 1))
    return _accumulate_scores(fact, x, adv.ravel() / n, trials)


def indecater_trials(fact: Factorisation, f: FunctionOracle, n: int, rng,
                     trials: int = 1, fresh_per_variable: bool = False) -> list:
    if not fact.is_independent:
        raise ValueError("IndeCateR requires independent factors")
    _check_n(n)
    D = fact.n_vars
    grads = fact.zeros_like_params((trials,))
    if not fresh_per_variable:
        _, x = _draw(fact, n, trials, rng)
    for d, k in enumerate(fact.cards):
        if fresh_per_variable:
            _, x = _draw(fact, n, trials, rng)
        xs = np.repeat(x[None], k, axis=0)
        xs[:, :, d] = np.arange(k)[:, None]
        F = f.batch(xs.reshape(-1, D)).reshape(k, trials, n).mean(axis=2).T
        p = fact.probs[d][0]
        # sum_delta dp(delta)/dtheta * F(delta) with dp_k/dtheta_j = p_k(1[k=j] - p_j)
        grads[d][:, 0, :] = p * (F - (F @ p)[:, None])
    return grads


def scater_trials(fact: Factorisation, f: FunctionOracle, n: int, rng,
                  trials: int = 1, fresh_per_variable: bool = False) -> list:
    """Structured estimator: exact sum over x_d, prefix sampled, suffix resampled given x_d.

    The suffix for each category reuses the uniforms of the pivot draw, so on
    an independent factorisation it reproduces the pivot's suffix exactly.
    """
    _check_n(n)
    grads = fact.zeros_like_params((trials,))
    trial = np.repeat(np.arange(trials), n)
    if not fresh_per_variable:
        u, x = _draw(fact, n, trials, rng)
    for d, k in enumerate(fact.cards):
        if fresh_per_variable:
            u, x = _draw(fact, n, trials, rng)
        idx = fact.parent_index(x, d)
        p = fact.probs[d][idx]
        F = np.empty((len(x), k))
        for delta in range(k):
            xd = x.copy()
            xd[:, d] = delta
            fact.fill(xd, u, d + 1)
            F[:, delta] = f.batch(xd)
        contrib = p * (F - (p * F).sum(axis=1, keepdims=True)) / n
        _scatter(grads[d], trial, idx, contrib)
    return grads


def leg_weights(fact: Factorisation, x: np.ndarray, d: int) -> np.ndarray:
    """p(x_d = delta | x_{!=d}) for every pivot row of ``x``, shape (M, K_d)."""
    x = np.asarray(x)
    k = fact.cards[d]
    xs = np.repeat(x[None], k, axis=0)
    xs[:, :, d] = np.arange(k)[:, None]
    # the prefix factors are shared by every delta and cancel in the ratio
    return softmax(fact.log_prob_many(xs).T, axis=1)


def leg_trials(fact: Factorisation, f: FunctionOracle, n: int, rng,
               trials: int = 1) -> list:
    _check_n(n)
    D = fact.n_vars
    grads = fact.zeros_like_params((trials,))
    trial = np.repeat(np.arange(trials), n)
    _, x = _draw(fact, n, trials, rng)
    for d, k in enumerate(fact.cards):
        xs = np.repeat(x[None], k, axis=0)
        xs[:, :, d] = np.arange(k)[:, None]
        w = softmax(fact.log_prob_many(xs).T, axis=1)
        F = f.batch(xs.reshape(-1, D)).reshape(k, -1).T
        idx = fact.parent_index(x, d)
        p = fact.probs[d][idx]
        wF = w * F
        contrib = (wF - p * wF.sum(axis=1, keepdims=True)) / n
        _scatter(grads[d], trial, idx, contrib)
    return grads


def gumbel_noise(rng, shape) -> np.ndarray:
    u = np.clip(rng.random(shape), UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP)
    return -np.log(-np.log(u))


def _check_tau(tau: float) -> None:
    if not tau > 0 or not math.isfinite(tau):
        raise ValueError(f"temperature must be positive, got {tau}")


def gumbel_softmax_sample(logits, tau: float, rng=None, noise=None) -> np.ndarray:
    """softmax((logits + g) / tau) with g standard Gumbel (or the supplied ``noise``)."""
    _check_tau(tau)
    logits = np.asarray(logits, dtype=np.float64)
    if noise is None:
        noise = gumbel_noise(rng, logits.shape)
    return softmax((logits + noise) / tau, axis=-1)


def _relaxed_softmax_vjp(y: np.ndarray, gy: np.ndarray, tau: float) -> np.ndarray:
    return y * (gy - (y * gy).sum(axis=-1, keepdims=True)) / tau


def gumbel_softmax_trials(table, f: FunctionOracle, n: int, tau: float, rng,
                          trials: int = 1, noise=None) -> list:
    """Pathwise gradient of mean_n f~(relaxed samples); biased.

    ``noise``, if given, is a list of per-variable Gumbel arrays of shape
    (trials, n, K_d).  Non-finite gradient entries are zeroed.
    """
    _check_tau(tau)
    _check_n(n)
    if isinstance(table, Factorisation):
        if not table.is_independent:
            raise ValueError("Gumbel-Softmax needs independent factors")
        rows = [t[0] for t in table.tables]
    elif isinstance(table, LogitTable):
        rows = list(table.rows)
    else:
        rows = [np.asarray(r, dtype=np.float64) for r in table]
    if not getattr(f, "has_relaxation", False):
        raise ValueError("Gumbel-Softmax requires a relaxed function")
    if noise is None:
        noise = [gumbel_noise(rng, (trials, n, r.size)) for r in rows]
    ys = [softmax((r + g) / tau, axis=-1) for r, g in zip(rows, noise)]
    _, gys = f.relaxed([y.reshape(trials * n, -1) for y in ys])
    grads = []
    for y, gy in zip(ys, gys):
        g = _relaxed_softmax_vjp(y, np.reshape(gy, y.shape), tau).mean(axis=1)
        g = np.where(np.isfinite(g), g, 0.0)
        grads.append(g[:, None, :])
    return grads


def _single(grads: list) -> list:
    return [g[0] for g in grads]


def reinforce(fact, f, n, rng) -> GradEstimate:
    return GradEstimate(_single(reinforce_trials(fact, f, n, rng)), n, n)


def rloo(fact, f, n, rng) -> GradEstimate:
    return GradEstimate(_single(rloo_trials(fact, f, n, rng)), n, n)


def indecater(fact, f, n, rng, fresh_per_variable: bool = False) -> GradEstimate:
    grads = _single(indecater_trials(fact, f, n, rng, 1, fresh_per_variable))
    drawn = n * fact.n_vars if fresh_per_variable else n
    return GradEstimate(grads, drawn, sum(fact.cards) * n)


def scater(fact, f, n, rng, fresh_per_variable: bool = False) -> GradEstimate:
    grads = _single(scater_trials(fact, f, n, rng, 1, fresh_per_variable))
    drawn = n * fact.n_vars if fresh_per_variable else n
    return GradEstimate(grads, drawn, sum(fact.cards) * n)


def leg(fact, f, n, rng) -> GradEstimate:
    return GradEstimate(_single(leg_trials(fact, f, n, rng)), n, sum(fact.cards) * n)


def gumbel_softmax_grad(table, f, n, tau, rng, noise=None) -> GradEstimate:
    if noise is not None:
        noise = [np.reshape(g, (1, n, -1)) for g in noise]
    grads = _single(gumbel_softmax_trials(table, f, n, tau, rng, 1, noise))
    return GradEstimate(grads, n, n)
