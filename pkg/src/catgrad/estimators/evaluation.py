from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..categorical import DEFAULT_BUDGET, exact_gradient, flatten

# bound on trials x parameters held in memory per chunk
_CHUNK_FLOATS = 4_000_000


@dataclass
class BiasVarianceReport:
    """Empirical moments of repeated estimates against the enumeration oracle.

    ``bias_band`` is five standard errors of the bias norm under the null
    of an unbiased estimator, sqrt(5^2 * sum(variance) / trials).
    """

    mean: np.ndarray
    exact: np.ndarray
    bias: np.ndarray
    variance: np.ndarray
    se: np.ndarray
    bias_norm: float
    total_variance: float
    total_variance_se: float
    bias_band: float
    trials: int
    samples_drawn: int
    function_evals: int

    def unbiased_per_coordinate(self, n_se: float = 5.0, atol: float = 1e-10) -> bool:
        return bool(np.all(np.abs(self.bias) <= n_se * self.se + atol))

    def bias_within_band(self, atol: float = 1e-12) -> bool:
        return self.bias_norm <= self.bias_band + atol


class MomentAccumulator:
    """Streaming per-coordinate mean/variance plus the spread of ||g - m0||^2."""

    def __init__(self):
        self.count = 0
        self.shift = None

    def update(self, g: np.ndarray) -> None:
        if self.shift is None:
            self.shift = g.mean(axis=0)
            self.s1 = np.zeros_like(self.shift)
            self.s2 = np.zeros_like(self.shift)
            self.q1 = 0.0
            self.q2 = 0.0
        c = g - self.shift
        self.s1 += c.sum(axis=0)
        self.s2 += (c * c).sum(axis=0)
        q = (c * c).sum(axis=1)
        self.q1 += q.sum()
        self.q2 += (q * q).sum()
        self.count += len(g)

    def mean(self) -> np.ndarray:
        return self.shift + self.s1 / self.count

    def variance(self) -> np.ndarray:
        n = self.count
        v = (self.s2 - self.s1 ** 2 / n) / (n - 1)
        return np.maximum(v, 0.0)

    def total_variance_se(self) -> float:
        n = self.count
        mq = self.q1 / n
        var_q = max(self.q2 / n - mq * mq, 0.0) * n / (n - 1)
        return float(np.sqrt(var_q / n))


def run_trials(config, fact, f, trials: int, rng, step: int = 0) -> MomentAccumulator:
    acc = MomentAccumulator()
    chunk = max(1, min(trials, _CHUNK_FLOATS // max(1, fact.n_params * max(1, config.n_samples))))
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        g = flatten(config.trials(fact, f, rng, m, step), lead=1)
        acc.update(g)
        done += m
    return acc


def bias_variance(config, fact, f, trials: int, rng, budget: int = DEFAULT_BUDGET,
                  exact=None) -> BiasVarianceReport:
    """Repeat ``config`` on (fact, f) and compare against the exact gradient."""
    if trials < 2:
        raise ValueError("bias_variance needs at least two trials")
    if exact is None:
        exact = flatten(exact_gradient(fact, f, budget))
    acc = run_trials(config, fact, f, trials, rng)
    mean = acc.mean()
    var = acc.variance()
    bias = mean - exact
    samples, evals = config.cost(fact.cards)
    return BiasVarianceReport(
        mean=mean, exact=np.asarray(exact), bias=bias, variance=var,
        se=np.sqrt(var / trials),
        bias_norm=float(np.linalg.norm(bias)),
        total_variance=float(var.sum()),
        total_variance_se=acc.total_variance_se(),
        bias_band=float(5.0 * np.sqrt(var.sum() / trials)),
        trials=trials, samples_drawn=samples, function_evals=evals,
    )


def gradient_variance_probe(grad_fn, probes: int, rng) -> float:
    """Summed per-coordinate sample variance of ``probes`` calls to ``grad_fn(rng)``.

    ``grad_fn`` re-estimates the gradient at a fixed parameter point using
    the generator it is given.
    """
    if probes < 2:
        raise ValueError("need at least two probes")
    g = np.stack([np.asarray(grad_fn(rng), dtype=np.float64).ravel() for _ in range(probes)])
    return float(g.var(axis=0, ddof=1).sum())
