"""The two synthetic objectives: exact-gradient comparison and binary optimisation."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..categorical import AdditiveFunction, Factorisation, LogitTable
from ..estimators import GradientEstimator
from ..harness.reports import RunReport, StepRecord
from ..nn import make_optimizer, optimizer_step

SYNTH_OPT_CONSTANT = 0.499


@dataclass
class SynthExactTask:
    """sum_d |x_d - b_d| under independent categoricals with logits ``table``."""

    targets: np.ndarray
    table: LogitTable

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.int64)
        if len(self.targets) != len(self.table.cards):
            raise ValueError("need one target per variable")
        if np.any(self.targets < 0) or np.any(self.targets >= np.array(self.table.cards)):
            raise ValueError("target outside its variable's range")

    @property
    def D(self) -> int:
        return len(self.table.cards)

    @property
    def cards(self) -> tuple:
        return self.table.cards

    @property
    def factorisation(self) -> Factorisation:
        return Factorisation.independent(self.table)

    def function(self) -> AdditiveFunction:
        return AdditiveFunction([np.abs(np.arange(k) - b)
                                 for k, b in zip(self.cards, self.targets)])

    @classmethod
    def random(cls, D: int, K: int, rng, logit_scale: float = 1.0) -> "SynthExactTask":
        table = LogitTable([logit_scale * rng.standard_normal(K) for _ in range(D)])
        return cls(rng.integers(0, K, size=D), table)


# configurations of the exact-gradient comparison: (D, K)
SYNTH_EXACT_PRESETS = {"fig1a": (12, 3), "fig1b": (6, 10), "fig1c": (3, 100)}


def synth_exact_preset(name: str, seed: int = 0) -> SynthExactTask:
    if name not in SYNTH_EXACT_PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(SYNTH_EXACT_PRESETS)}")
    D, K = SYNTH_EXACT_PRESETS[name]
    return SynthExactTask.random(D, K, np.random.default_rng(seed))


def synth_exact_f(task: SynthExactTask, x) -> float:
    x = np.asarray(x)
    return float(np.abs(x - task.targets).sum())


@dataclass
class SynthOptTask:
    """Maximise E[(1/D) sum_i (x_i - c)^2] over D independent binary variables."""

    D: int = 200
    c: float = SYNTH_OPT_CONSTANT

    def init_logits(self) -> np.ndarray:
        return np.zeros((self.D, 2))

    def batched_f(self, x: np.ndarray) -> np.ndarray:
        return ((x - self.c) ** 2).mean(axis=-1)

    def relaxed_f(self, y: np.ndarray) -> tuple:
        """Relaxed objective on soft one-hots (B, N, D, 2) using the mass on 1."""
        y1 = y[..., 1]
        vals = ((y1 - self.c) ** 2).mean(axis=-1)
        gy = np.zeros_like(y)
        gy[..., 1] = 2.0 * (y1 - self.c) / self.D
        return vals, gy

    def exact_objective(self, logits: np.ndarray) -> float:
        p1 = _p_one(logits)
        return float(np.mean(p1 * (1 - self.c) ** 2 + (1 - p1) * self.c ** 2))

    def exact_gradient(self, logits: np.ndarray) -> np.ndarray:
        p1 = _p_one(logits)
        slope = ((1 - self.c) ** 2 - self.c ** 2) / self.D * p1 * (1 - p1)
        return np.stack([-slope, slope], axis=-1)

    @property
    def optimum(self) -> float:
        return (1 - self.c) ** 2


def _p_one(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits)
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(logits[..., 0] - logits[..., 1]))


def synth_opt_objective(task: SynthOptTask, x) -> float:
    return float(np.mean((np.asarray(x, dtype=np.float64) - task.c) ** 2))


def _summed_variance(grads: np.ndarray) -> float:
    return float(grads.var(axis=0, ddof=1).sum())


def run_synth_opt(task: SynthOptTask, estimator: GradientEstimator, optimizer: str = "rmsprop",
                  lr: float = 5.0, iterations: int = 1000, rng=None, arm: str | None = None,
                  log_every: int = 10, probes: int = 4, report: RunReport | None = None,
                  stop_at: float | None = None) -> RunReport:
    """Gradient ascent on the logits; logs the closed-form objective.

    Costs are running totals.  A non-finite update marks the arm diverged
    and stops it.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    probe_rng = np.random.default_rng(rng.integers(2**63))
    arm = arm or estimator.label
    report = report if report is not None else RunReport("opt-synth")
    params = {"logits": task.init_logits()}
    opt = make_optimizer(optimizer, lr)
    samples = evals = 0
    elapsed = 0.0

    def estimate(r, step):
        return estimator.estimate_batched(params["logits"][None], task.batched_f, r,
                                          f_relaxed=task.relaxed_f, step=step)

    def log(step, diverged=False):
        var = 0.0
        if probes >= 2 and not diverged:
            g = np.stack([estimate(probe_rng, step).grad[0].ravel() for _ in range(probes)])
            var = _summed_variance(g)
        obj = task.exact_objective(params["logits"]) if not diverged else float("nan")
        report.add(StepRecord(arm, step, obj, var, 0.0, samples, evals, elapsed * 1e3, diverged))
        return obj

    obj = log(0)
    for step in range(1, iterations + 1):
        t0 = time.perf_counter()
        est = estimate(rng, step - 1)
        samples += est.samples_drawn
        evals += est.function_evals
        old = params["logits"].copy()
        try:
            optimizer_step(opt, params, {"logits": -est.grad[0]})
        except FloatingPointError:
            params["logits"] = old
            log(step, diverged=True)
            break
        elapsed += time.perf_counter() - t0
        if not np.all(np.isfinite(params["logits"])):
            log(step, diverged=True)
            break
        if step % log_every == 0 or step == iterations:
            obj = log(step)
            if stop_at is not None and obj >= stop_at:
                break
    return report
