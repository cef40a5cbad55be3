"""Run a configured experiment and collect a RunReport."""
from __future__ import annotations

import zlib

import numpy as np

from ..categorical import flatten, exact_gradient
from ..estimators import bias_variance, gradient_variance_probe
from ..tasks.dvae import DiscreteVAE, binarize, make_pattern_data
from ..tasks.nesy import NesySumClassifier, make_glyph_data, nesy_build_dataset
from ..tasks.synthetic import SynthExactTask, SynthOptTask, run_synth_opt, synth_exact_preset
from .config import ExperimentConfig
from .idx import load_idx
from .reports import RunReport, StepRecord, write_metrics

__all__ = ["arm_rng", "gradient_variance_probe", "run_experiment"]


def arm_rng(seed: int, name: str) -> np.random.Generator:
    """Generator keyed by (seed, arm name): arms do not perturb each other."""
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def _bench_exact(cfg: ExperimentConfig, report: RunReport) -> None:
    t = cfg.task
    if "preset" in t:
        task = synth_exact_preset(t["preset"], cfg.seed)
    else:
        task = SynthExactTask.random(int(t.get("D", 3)), int(t.get("K", 3)),
                                     np.random.default_rng(cfg.seed))
    fact, f = task.factorisation, task.function()
    exact = flatten(exact_gradient(fact, f))
    trials = max(cfg.iterations, 2)
    for name in cfg.arms:
        r = bias_variance(cfg.estimator(name), fact, f, trials, arm_rng(cfg.seed, name),
                          exact=exact)
        report.add(StepRecord(name, trials, r.bias_norm, r.total_variance, r.bias_band,
                              r.samples_drawn * trials, r.function_evals * trials))
        report.summary[name] = {
            "bias_norm": r.bias_norm, "bias_band": r.bias_band,
            "total_variance": r.total_variance, "total_variance_se": r.total_variance_se,
            "bias_within_band": r.bias_within_band(),
            "unbiased_per_coordinate": r.unbiased_per_coordinate(),
            "samples_per_estimate": r.samples_drawn, "evals_per_estimate": r.function_evals}


def _opt_synth(cfg: ExperimentConfig, report: RunReport) -> None:
    task = SynthOptTask(D=int(cfg.task.get("D", 200)), c=float(cfg.task.get("c", 0.499)))
    for name in cfg.arms:
        run_synth_opt(task, cfg.estimator(name), cfg.optimizer, cfg.arm_lr(name),
                      cfg.iterations, arm_rng(cfg.seed, name), arm=name,
                      log_every=cfg.log_every, probes=cfg.probes, report=report,
                      stop_at=cfg.task.get("stop_at"))
        last = report.arm(name)[-1]
        report.summary[name] = {"final_objective": last.objective, "diverged": last.diverged,
                                "samples": last.samples, "function_evals": last.function_evals}


def _dvae_data(cfg: ExperimentConfig) -> np.ndarray:
    t = cfg.task
    if "images" in t:
        X, _ = load_idx(t["images"], t["labels"])
        return binarize(X[: int(t.get("n_train", len(X)))])
    return make_pattern_data(int(t.get("n_train", 2000)), np.random.default_rng([cfg.seed, 1]))


def _dvae(cfg: ExperimentConfig, report: RunReport) -> None:
    X = _dvae_data(cfg)
    t = cfg.task
    names = list(cfg.arms)
    for i, name in enumerate(names):
        others = {n: cfg.estimator(n) for n in names if n != name} if i == 0 else None
        model = DiscreteVAE(
            latent_dim=int(t.get("latent_dim", 16)), hidden=tuple(t.get("hidden", (48, 32))),
            estimator=cfg.estimator(name), learning_rate=cfg.arm_lr(name),
            batch_size=int(t.get("batch_size", 32)), n_steps=cfg.iterations,
            log_every=cfg.log_every, n_probes=max(cfg.probes, 2), probe_estimators=others,
            probe_steps=tuple(s for s in t.get("probe_steps", ()) if s <= cfg.iterations),
            random_state=int(arm_rng(cfg.seed, name).integers(2**31)))
        model.fit(X)
        for h in model.history_:
            report.add(StepRecord(name, h["step"], h["negated_elbo"], h["grad_variance"], 0.0,
                                  h["samples"], h["function_evals"], h["elapsed_ms"]))
        if model.diverged_:
            last = report.arm(name)[-1]
            report.add(StepRecord(name, last.step + 1, float("nan"), float("nan"), 0.0,
                                  last.samples, last.function_evals, last.elapsed_ms, True))
        summ = {"initial": model.history_[0]["negated_elbo"],
                "final": model.history_[-1]["negated_elbo"], "diverged": model.diverged_}
        if others is not None:
            summ["probes"] = {str(k): v for k, v in model.probes_.items()}
        report.summary[name] = summ


def _nesy_data(cfg: ExperimentConfig) -> tuple:
    t = cfg.task
    D = int(t.get("seq_len", 3))
    if "images" in t:
        imgs, labels = load_idx(t["images"], t["labels"])
        timgs, tlabels = load_idx(t["test_images"], t["test_labels"])
    else:
        C = int(t.get("n_classes", 4))
        imgs, labels = make_glyph_data(int(t.get("n_train", 900)),
                                       np.random.default_rng([cfg.seed, 2]), C)
        timgs, tlabels = make_glyph_data(int(t.get("n_test", 300)),
                                         np.random.default_rng([cfg.seed, 3]), C)
    train = nesy_build_dataset(imgs, labels, D, np.random.default_rng([cfg.seed, 4]))
    test = nesy_build_dataset(timgs, tlabels, D, np.random.default_rng([cfg.seed, 5]))
    return train, test


def _nesy(cfg: ExperimentConfig, report: RunReport) -> None:
    train, test = _nesy_data(cfg)
    t = cfg.task
    for name in cfg.arms:
        model = NesySumClassifier(
            n_classes=int(t.get("n_classes", 4)), hidden=tuple(t.get("hidden", (32,))),
            estimator=cfg.estimator(name), learning_rate=cfg.arm_lr(name),
            batch_size=int(t.get("batch_size", 16)), n_epochs=cfg.iterations,
            target_accuracy=t.get("target_accuracy"),
            random_state=int(arm_rng(cfg.seed, name).integers(2**31)))
        try:
            model.fit(train.images, train.sums, eval_set=(test.images, test.sums))
        except ValueError as exc:
            report.summary[name] = {"error": str(exc)}
            continue
        for h in model.history_:
            report.add(StepRecord(name, h["epoch"], h["loss"], 0.0, h["accuracy"],
                                  h["samples"], h["function_evals"], h["elapsed_ms"]))
        report.summary[name] = {"final_accuracy": model.history_[-1]["accuracy"],
                                "best_accuracy": max(h["accuracy"] for h in model.history_),
                                "epochs": len(model.history_), "diverged": model.diverged_}


_RUNNERS = {"bench-exact": _bench_exact, "opt-synth": _opt_synth, "dvae": _dvae, "nesy": _nesy}


def run_experiment(cfg: ExperimentConfig, out=None, fmt: str | None = None) -> RunReport:
    """Run every arm of ``cfg``; write the report when an output path is given."""
    cfg.validate()
    if cfg.experiment not in _RUNNERS:
        raise ValueError(f"unknown experiment {cfg.experiment!r}")
    report = RunReport(cfg.experiment, config=cfg.to_dict())
    _RUNNERS[cfg.experiment](cfg, report)
    out = out if out is not None else cfg.out
    if out:
        write_metrics(report, out, fmt or cfg.format)
    return report
