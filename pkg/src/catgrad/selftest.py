"""Reduced-size property suites run by ``catgrad selftest``."""
from __future__ import annotations

import contextlib
import os
import tempfile
import time
from pathlib import Path

import numpy as np

from .categorical import (CallableFunction, Factorisation, LookupFunction, exact_gradient,
                          flatten, random_chain, random_independent)
from .estimators import (GumbelSoftmax, Indecater, Leg, Reinforce, Rloo, Scater,
                         bias_variance, indecater_trials, leg_trials, leg_weights)
from .estimators import config as est_config
from .harness.reports import RunReport, StepRecord, read_metrics, write_metrics
from .nn import ParamStore, Tape, apply_layers, finite_diff_check, init_params, mlp
from .tasks.synthetic import SYNTH_EXACT_PRESETS, synth_exact_preset

CORRUPT_ENV = "CATGRAD_SELFTEST_CORRUPT"


def _instance(seed: int, chain: bool = False):
    rng = np.random.default_rng(seed)
    cards = tuple(int(k) for k in rng.integers(2, 4, size=int(rng.integers(1, 4))))
    fact = random_chain(cards, rng) if chain else random_independent(cards, rng)
    return fact, LookupFunction.random(cards, rng)


def suite_unbiasedness() -> tuple:
    configs = [Reinforce(4), Rloo(4), Indecater(1), Scater(1), Leg(1)]
    for seed in range(5):
        fact, f = _instance(seed)
        exact = flatten(exact_gradient(fact, f))
        for i, c in enumerate(configs):
            r = bias_variance(c, fact, f, 20_000, np.random.default_rng([seed, i]), exact=exact)
            if not r.unbiased_per_coordinate():
                return False, f"{c.label} biased on instance {seed}"
    return True, "5 instances x 5 estimators"


def suite_variance_ordering() -> tuple:
    for seed in range(5):
        fact, f = _instance(100 + seed)
        for n in (1, 4):
            ind = bias_variance(Indecater(n), fact, f, 5_000, np.random.default_rng([seed, n]))
            rf = bias_variance(Reinforce(n), fact, f, 5_000, np.random.default_rng([seed, n, 1]))
            slack = 3 * np.hypot(ind.total_variance_se, rf.total_variance_se)
            if ind.total_variance > rf.total_variance + slack:
                return False, f"IndeCateR variance above REINFORCE on instance {seed}, N={n}"
    return True, "5 instances, N in {1, 4}"


def suite_additive_exactness() -> tuple:
    for name in SYNTH_EXACT_PRESETS:
        task = synth_exact_preset(name, 0)
        fact, f = task.factorisation, task.function()
        exact = flatten(exact_gradient(fact, f))
        g = flatten(Indecater(1).trials(fact, f, np.random.default_rng(0), 4), lead=1)
        err = np.abs(g - exact).max()
        if err >= 1e-9:
            return False, f"{name}: max error {err:.3g}"
    return True, "all three configurations"


def suite_leg_equivalence() -> tuple:
    for seed in range(10):
        fact, f = _instance(200 + seed)
        a = flatten(leg_trials(fact, f, 1, np.random.default_rng(seed), 10), lead=1)
        b = flatten(indecater_trials(fact, f, 1, np.random.default_rng(seed), 10), lead=1)
        if np.abs(a - b).max() >= 1e-12:
            return False, f"LEG differs from IndeCateR on instance {seed}"
        chain, _ = _instance(300 + seed, chain=True)
        x = np.random.default_rng(seed).integers(0, min(chain.cards), size=(8, chain.n_vars))
        for d in range(chain.n_vars):
            if np.abs(leg_weights(chain, x, d).sum(axis=1) - 1).max() > 1e-12:
                return False, "LEG weights do not sum to one"
    return True, "10 instances"


def suite_gs_zero_gradient() -> tuple:
    fact = random_independent((3, 4), np.random.default_rng(0))
    step = CallableFunction(lambda x: x.sum(axis=1).astype(float),
                            relaxed=lambda ys: (sum(np.floor(y.argmax(axis=1)) for y in ys),
                                                [np.zeros_like(y) for y in ys]))
    g = flatten(GumbelSoftmax(8, 0.5).trials(fact, step, np.random.default_rng(1), 16), lead=1)
    return bool(np.all(g == 0)), "piecewise-constant relaxed f"


def suite_autodiff() -> tuple:
    rng = np.random.default_rng(0)
    layers = mlp("net", [5, 6, 4])
    params = init_params(layers, rng)
    x = rng.standard_normal((7, 5))
    t = (rng.random((7, 4)) < 0.5).astype(float)

    def loss_and_grad(p: ParamStore):
        tape = Tape()
        out = apply_layers(tape, p, layers, tape.leaf(x))
        ll = tape.sum(tape.bce_with_logits(tape.sigmoid(out), t))
        p.zero_grad()
        tape.backward(ll, 1.0)
        grads = {leaf.param: leaf.grad for leaf in tape.leaves if leaf.param}
        return float(ll.value), grads

    chk = finite_diff_check(loss_and_grad, params, n_coords=40)
    return chk.passed, f"max relative error {chk.max_rel_error:.2e}"


def suite_cost_accounting() -> tuple:
    cards = (3, 4, 2)
    for c, expect in [(Indecater(2), 18), (Scater(3), 27), (Leg(1), 9),
                      (Reinforce(5), 5), (Rloo(4), 4)]:
        if c.cost(cards)[1] != expect:
            return False, f"{c.label} reports {c.cost(cards)[1]} evaluations, expected {expect}"
    return True, "declared evaluation counts"


def suite_report_roundtrip() -> tuple:
    rep = RunReport("selftest")
    for s in range(20):
        rep.add(StepRecord("a", s, 0.1 * s + 1 / 3, s * 1e-7, 0.0, s, 2 * s, 0.5))
    with tempfile.TemporaryDirectory() as tmp:
        for fmt in ("csv", "json"):
            back = read_metrics(write_metrics(rep, Path(tmp) / f"r.{fmt}", fmt))
            if back.steps != rep.steps:
                return False, f"{fmt} round-trip changed the steps"
    return True, "csv and json"


SUITES = {
    "unbiasedness": suite_unbiasedness,
    "variance-ordering": suite_variance_ordering,
    "additive-exactness": suite_additive_exactness,
    "leg-equivalence": suite_leg_equivalence,
    "gs-zero-gradient": suite_gs_zero_gradient,
    "autodiff": suite_autodiff,
    "cost-accounting": suite_cost_accounting,
    "report-roundtrip": suite_report_roundtrip,
}


@contextlib.contextmanager
def corrupted_indecater(scale: float = 1.05):
    """Test hook: IndeCateR returns gradients scaled by ``scale``."""
    original_trials = est_config.Indecater.trials
    original_fn = est_config.factored.indecater_trials

    def trials(self, *a, **kw):
        return [scale * g for g in original_trials(self, *a, **kw)]

    def fn(*a, **kw):
        return [scale * g for g in original_fn(*a, **kw)]

    est_config.Indecater.trials = trials
    globals()["indecater_trials"] = fn
    try:
        yield
    finally:
        est_config.Indecater.trials = original_trials
        globals()["indecater_trials"] = original_fn


def run_selftest(corrupt: bool | None = None, suites=None, out=print) -> int:
    """Run the suites, printing one line each; 0 iff all pass."""
    if corrupt is None:
        corrupt = os.environ.get(CORRUPT_ENV, "") not in ("", "0")
    names = list(suites or SUITES)
    failed = []
    ctx = corrupted_indecater() if corrupt else contextlib.nullcontext()
    with ctx:
        for name in names:
            t0 = time.perf_counter()
            try:
                ok, detail = SUITES[name]()
            except Exception as exc:  # a crashing suite is a failing suite
                ok, detail = False, f"{type(exc).__name__}: {exc}"
            status = "PASS" if ok else "FAIL"
            out(f"{status}  {name:<20} {time.perf_counter() - t0:6.1f}s  {detail}")
            if not ok:
                failed.append(name)
    if failed:
        out(f"selftest failed: {', '.join(failed)}")
        return 1
    out("selftest passed")
    return 0
