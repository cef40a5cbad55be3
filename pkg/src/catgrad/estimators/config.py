"""Estimator objects with scikit-learn parameter handling.

Each class wraps one estimator variant so that configurations can be
cloned, compared and serialised through ``get_params``/``set_params``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from sklearn.base import BaseEstimator

from ..categorical import Factorisation
from . import batched, factored


@dataclass(frozen=True)
class AnnealSchedule:
    initial: float
    decay_factor: float = 1.0
    period: int = 1
    floor: float = 0.0

    def __post_init__(self):
        # initial == floor is allowed: it pins the temperature
        if not self.initial > 0:
            raise ValueError("initial temperature must be positive")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay factor must lie in (0, 1]")
        if self.period < 1:
            raise ValueError("period must be >= 1")
        if self.floor < 0 or self.floor > self.initial:
            raise ValueError("floor must lie in [0, initial]")


def anneal(schedule: AnnealSchedule, step: int) -> float:
    """tau(step) = max(floor, initial * decay_factor ** (step // period))."""
    if step < 0:
        raise ValueError("step must be non-negative")
    tau = schedule.initial * schedule.decay_factor ** (step // schedule.period)
    return max(schedule.floor, tau)


class GradientEstimator(BaseEstimator):
    """Common interface; subclasses set ``variant`` and implement the hooks."""

    variant = ""
    requires_relaxation = False

    def cost(self, cards) -> tuple:
        """(samples drawn, function evaluations) for one estimate."""
        n = self.n_samples
        return n, n

    def trials(self, fact: Factorisation, f, rng, trials: int, step: int = 0) -> list:
        raise NotImplementedError

    def estimate(self, fact: Factorisation, f, rng, step: int = 0) -> factored.GradEstimate:
        grads = self.trials(fact, f, rng, 1, step)
        samples, evals = self.cost(fact.cards)
        return factored.GradEstimate([g[0] for g in grads], samples, evals)

    def estimate_batched(self, logits, f, rng, f_relaxed=None,
                         step: int = 0) -> batched.BatchEstimate:
        raise ValueError(f"{self.variant} is not available for batched pipelines")

    @property
    def label(self) -> str:
        return self.variant


class Reinforce(GradientEstimator):
    variant = "reinforce"

    def __init__(self, n_samples: int = 1):
        self.n_samples = n_samples

    def trials(self, fact, f, rng, trials, step=0):
        return factored.reinforce_trials(fact, f, self.n_samples, rng, trials)

    def estimate_batched(self, logits, f, rng, f_relaxed=None, step=0):
        return batched.reinforce_batched(logits, f, self.n_samples, rng)


class Rloo(GradientEstimator):
    variant = "rloo"

    def __init__(self, n_samples: int = 2):
        self.n_samples = n_samples

    def trials(self, fact, f, rng, trials, step=0):
        return factored.rloo_trials(fact, f, self.n_samples, rng, trials)

    def estimate_batched(self, logits, f, rng, f_relaxed=None, step=0):
        return batched.rloo_batched(logits, f, self.n_samples, rng)


class Indecater(GradientEstimator):
    variant = "indecater"

    def __init__(self, n_samples: int = 1, fresh_per_variable: bool = False):
        self.n_samples = n_samples
        self.fresh_per_variable = fresh_per_variable

    def cost(self, cards):
        n = self.n_samples
        return (n * len(cards) if self.fresh_per_variable else n), sum(cards) * n

    def trials(self, fact, f, rng, trials, step=0):
        return factored.indecater_trials(fact, f, self.n_samples, rng, trials,
                                         self.fresh_per_variable)

    def estimate_batched(self, logits, f, rng, f_relaxed=None, step=0):
        return batched.indecater_batched(logits, f, self.n_samples, rng,
                                         self.fresh_per_variable)


class Scater(Indecater):
    variant = "scater"

    def trials(self, fact, f, rng, trials, step=0):
        return factored.scater_trials(fact, f, self.n_samples, rng, trials,
                                      self.fresh_per_variable)


class Leg(GradientEstimator):
    variant = "leg"

    def __init__(self, n_samples: int = 1):
        self.n_samples = n_samples

    def cost(self, cards):
        return self.n_samples, sum(cards) * self.n_samples

    def trials(self, fact, f, rng, trials, step=0):
        return factored.leg_trials(fact, f, self.n_samples, rng, trials)


class GumbelSoftmax(GradientEstimator):
    """Relaxed estimator; ``schedule`` overrides the constant ``temperature``."""

    variant = "gumbel_softmax"
    requires_relaxation = True

    def __init__(self, n_samples: int = 1, temperature: float = 1.0,
                 schedule: AnnealSchedule | None = None):
        self.n_samples = n_samples
        self.temperature = temperature
        self.schedule = schedule

    def tau(self, step: int = 0) -> float:
        if self.schedule is not None:
            return anneal(self.schedule, step)
        return self.temperature

    def trials(self, fact, f, rng, trials, step=0):
        return factored.gumbel_softmax_trials(fact, f, self.n_samples, self.tau(step),
                                              rng, trials)

    def estimate_batched(self, logits, f, rng, f_relaxed=None, step=0):
        if f_relaxed is None:
            raise ValueError("Gumbel-Softmax requires a relaxed function")
        return batched.gumbel_softmax_batched(logits, f_relaxed, self.n_samples,
                                              self.tau(step), rng)


VARIANTS = {
    "reinforce": Reinforce,
    "rloo": Rloo,
    "scater": Scater,
    "indecater": Indecater,
    "leg": Leg,
    "gumbel_softmax": GumbelSoftmax,
}

ALIASES = {"gs": "gumbel_softmax", "gumbel-softmax": "gumbel_softmax",
           "gumbel": "gumbel_softmax"}


def make_estimator(variant: str, **params) -> GradientEstimator:
    key = variant.lower().replace(" ", "")
    key = ALIASES.get(key, key)
    if key not in VARIANTS:
        raise ValueError(f"unknown estimator variant {variant!r}; "
                         f"choose from {sorted(VARIANTS)}")
    est = VARIANTS[key](**params)
    n = est.n_samples
    if int(n) != n or n < (2 if key == "rloo" else 1):
        raise ValueError(f"invalid sample count {n} for {key}")
    if key == "gumbel_softmax" and not (est.temperature > 0 and math.isfinite(est.temperature)):
        raise ValueError("temperature must be positive")
    return est
