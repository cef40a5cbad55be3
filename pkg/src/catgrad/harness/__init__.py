"""Experiment orchestration.  The runner and config modules load lazily because
they depend on the task pipelines, which themselves use the report types."""
from ..estimators import gradient_variance_probe
from .idx import load_idx
from .reports import RunReport, StepRecord, read_metrics, write_metrics

_LAZY = {"run_experiment": "runner", "ExperimentConfig": "config", "PRESETS": "config",
         "load_config": "config", "parse_config": "config", "preset": "config"}

__all__ = ["RunReport", "StepRecord", "gradient_variance_probe", "load_idx", "read_metrics",
           "write_metrics", *_LAZY]


def __getattr__(name):
    if name in _LAZY:
        import importlib
        return getattr(importlib.import_module(f".{_LAZY[name]}", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
