"""Experiment configuration: presets and a versioned INI file format.

File layout (format version 1)::

    [experiment]
    version = 1
    id = opt-synth
    seed = 0
    iterations = 1000
    optimizer = rmsprop
    lr = 5.0

    [task]
    D = 200

    [arm.indecater]
    variant = indecater
    n_samples = 2

Values are parsed as Python literals where possible and kept as strings
otherwise.  Arm sections accept the estimator's parameters plus ``lr`` (a
per-arm learning rate) and, for Gumbel-Softmax, ``decay``/``period``/``floor``
which build an annealing schedule starting at ``temperature``.
"""
from __future__ import annotations

import ast
import configparser
import copy
import math
from dataclasses import dataclass, field
from pathlib import Path

from ..estimators import AnnealSchedule, GradientEstimator, make_estimator
from ..tasks.synthetic import SYNTH_EXACT_PRESETS

CONFIG_VERSION = 1
EXPERIMENTS = ("bench-exact", "opt-synth", "dvae", "nesy")
FORMATS = ("csv", "json")

_TOP_KEYS = {"version", "id", "seed", "iterations", "optimizer", "lr", "log_every",
             "out", "format", "probes"}


@dataclass
class ExperimentConfig:
    experiment: str
    arms: dict = field(default_factory=dict)   # name -> {"variant": ..., params}
    task: dict = field(default_factory=dict)
    optimizer: str = "adam"
    lr: float = 1e-3
    iterations: int = 100
    seed: int = 0
    log_every: int = 10
    probes: int = 4
    out: str | None = None
    format: str = "csv"

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if self.format not in FORMATS:
            raise ValueError(f"unknown format {self.format!r}; choose csv or json")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ValueError("seed must be a non-negative integer")
        if not isinstance(self.iterations, int) or self.iterations < 0:
            raise ValueError("iterations must be a non-negative integer")
        if self.log_every < 1:
            raise ValueError("log_every must be positive")
        if not self.arms:
            raise ValueError("no estimator arms configured")
        if self.experiment == "bench-exact":
            preset = self.task.get("preset")
            if preset is not None and preset not in SYNTH_EXACT_PRESETS:
                raise ValueError(f"unknown preset {preset!r}")
        for name in self.arms:
            self.estimator(name)
        return self

    def estimator(self, name: str) -> GradientEstimator:
        spec = dict(self.arms[name])
        variant = spec.pop("variant", name)
        extra = {k: spec.pop(k) for k in ("decay", "period", "floor") if k in spec}
        spec.pop("lr", None)
        if extra:
            tau0 = spec.get("temperature", 1.0)
            spec["schedule"] = AnnealSchedule(
                initial=tau0, decay_factor=math.exp(-extra.get("decay", 0.0)),
                period=extra.get("period", 1), floor=extra.get("floor", 0.0))
        try:
            return make_estimator(variant, **spec)
        except TypeError as exc:
            raise ValueError(f"arm {name!r}: {exc}") from exc

    def arm_lr(self, name: str) -> float:
        return float(self.arms[name].get("lr", self.lr))

    def select_arms(self, names) -> "ExperimentConfig":
        missing = [n for n in names if n not in self.arms]
        if missing:
            raise ValueError(f"unknown arm(s) {missing}; available: {list(self.arms)}")
        cfg = copy.deepcopy(self)
        cfg.arms = {n: self.arms[n] for n in names}
        return cfg

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, "arms": copy.deepcopy(self.arms),
                "task": dict(self.task), "optimizer": self.optimizer, "lr": self.lr,
                "iterations": self.iterations, "seed": self.seed,
                "log_every": self.log_every, "probes": self.probes}


def _arm(variant, **params) -> dict:
    return {"variant": variant, **params}


def _bench_exact(preset: str) -> ExperimentConfig:
    return ExperimentConfig(
        "bench-exact", task={"preset": preset}, iterations=1000, log_every=1,
        arms={"reinforce": _arm("reinforce", n_samples=1000),
              "rloo": _arm("rloo", n_samples=1000),
              "gs": _arm("gumbel_softmax", n_samples=1000, temperature=1.0),
              "indecater": _arm("indecater", n_samples=1)})


PRESETS = {
    "fig1a": lambda: _bench_exact("fig1a"),
    "fig1b": lambda: _bench_exact("fig1b"),
    "fig1c": lambda: _bench_exact("fig1c"),
    "opt-synth": lambda: ExperimentConfig(
        "opt-synth", task={"D": 200}, optimizer="rmsprop", lr=5.0, iterations=1000,
        log_every=10, arms={
            "indecater": _arm("indecater", n_samples=2),
            "rloo-s": _arm("rloo", n_samples=2, lr=1.0),
            "rloo-f": _arm("rloo", n_samples=800),
            "gs": _arm("gumbel_softmax", n_samples=800, temperature=0.1, lr=0.01,
                       decay=0.05, period=20, floor=0.01)}),
    "dvae": lambda: ExperimentConfig(
        "dvae", task={"n_train": 2000, "latent_dim": 16, "batch_size": 32,
                      "probe_steps": (100, 1000, 2000)},
        optimizer="adam", lr=1e-4, iterations=2000, log_every=100, probes=32, arms={
            "indecater": _arm("indecater", n_samples=2),
            "rloo-s": _arm("rloo", n_samples=2),
            "rloo-f": _arm("rloo", n_samples=64),
            "gs": _arm("gumbel_softmax", n_samples=1, temperature=1.0,
                       decay=0.01, period=100, floor=0.1)}),
    "nesy": lambda: ExperimentConfig(
        "nesy", task={"seq_len": 3, "n_classes": 4, "n_train": 900, "n_test": 300,
                      "batch_size": 16},
        optimizer="adam", lr=1e-3, iterations=200, log_every=1, arms={
            "indecater": _arm("indecater", n_samples=2, fresh_per_variable=True),
            "rloo-s": _arm("rloo", n_samples=6),
            "rloo-f": _arm("rloo", n_samples=24)}),
}

# default preset per subcommand
DEFAULT_PRESET = {"bench-exact": "fig1a", "opt-synth": "opt-synth", "dvae": "dvae", "nesy": "nesy"}


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name]()


def _literal(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ValueError(f"{source}: {exc}") from exc
    if "experiment" not in cp:
        raise ValueError(f"{source}: missing [experiment] section")
    top = {k: _literal(v) for k, v in cp["experiment"].items()}
    version = top.pop("version", None)
    if version != CONFIG_VERSION:
        raise ValueError(f"{source}: unsupported config version {version!r}")
    unknown = set(top) - _TOP_KEYS
    if unknown:
        raise ValueError(f"{source}: unknown keys {sorted(unknown)} in [experiment]")
    if "id" not in top:
        raise ValueError(f"{source}: [experiment] needs an id")
    cfg = ExperimentConfig(top.pop("id"))
    for k, v in top.items():
        setattr(cfg, k, v)
    if "task" in cp:
        cfg.task = {k: _literal(v) for k, v in cp["task"].items()}
    for sec in cp.sections():
        if sec.startswith("arm."):
            cfg.arms[sec[4:]] = {k: _literal(v) for k, v in cp[sec].items()}
        elif sec not in ("experiment", "task"):
            raise ValueError(f"{source}: unknown section [{sec}]")
    if "lr" in top:
        cfg.lr = float(cfg.lr)
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


def dump_config(cfg: ExperimentConfig) -> str:
    lines = ["[experiment]", f"version = {CONFIG_VERSION}", f"id = {cfg.experiment}"]
    for k in ("seed", "iterations", "optimizer", "lr", "log_every", "probes", "format"):
        lines.append(f"{k} = {getattr(cfg, k)!r}" if isinstance(getattr(cfg, k), str)
                     else f"{k} = {getattr(cfg, k)}")
    if cfg.out:
        lines.append(f"out = {cfg.out!r}")
    if cfg.task:
        lines += ["", "[task]"] + [f"{k} = {v!r}" for k, v in cfg.task.items()]
    for name, spec in cfg.arms.items():
        lines += ["", f"[arm.{name}]"] + [f"{k} = {v!r}" for k, v in spec.items()]
    return "\n".join(lines) + "\n"
