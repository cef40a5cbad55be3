"""Run reports and their CSV/JSON serialisation."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .. import __version__

FORMATS = ("csv", "json")


@dataclass
class StepRecord:
    """One logged step of one estimator arm.

    ``samples`` and ``function_evals`` are running totals since step 0.
    ``metric`` is experiment specific (bias band, test accuracy, ...).
    """

    arm: str
    step: int
    objective: float
    grad_variance: float = 0.0
    metric: float = 0.0
    samples: int = 0
    function_evals: int = 0
    elapsed_ms: float = 0.0
    diverged: bool = False


STEP_FIELDS = [f.name for f in fields(StepRecord)]
TIMING_FIELDS = ("elapsed_ms",)


@dataclass
class RunReport:
    experiment: str
    steps: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    version: str = __version__

    def add(self, record: StepRecord) -> None:
        prev = [r.step for r in self.steps if r.arm == record.arm]
        if prev and record.step <= prev[-1]:
            raise ValueError(f"steps for arm {record.arm!r} must increase")
        if not record.diverged and not all(
                math.isfinite(getattr(record, k)) for k in ("objective", "grad_variance", "metric")):
            raise ValueError("non-finite values must be flagged as diverged")
        self.steps.append(record)

    def arm(self, name: str) -> list:
        return [r for r in self.steps if r.arm == name]

    def arms(self) -> list:
        seen = []
        for r in self.steps:
            if r.arm not in seen:
                seen.append(r.arm)
        return seen

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, "version": self.version,
                "config": self.config, "summary": self.summary,
                "steps": [asdict(r) for r in self.steps]}

    @classmethod
    def from_dict(cls, data: dict) -> "RunReport":
        return cls(experiment=data["experiment"],
                   steps=[StepRecord(**s) for s in data.get("steps", [])],
                   summary=data.get("summary", {}), config=data.get("config", {}),
                   version=data.get("version", __version__))

    def without_timing(self) -> dict:
        d = self.to_dict()
        for s in d["steps"]:
            for k in TIMING_FIELDS:
                s.pop(k, None)
        d["summary"] = {arm: {k: v for k, v in vals.items() if k not in TIMING_FIELDS}
                        if isinstance(vals, dict) else vals
                        for arm, vals in d["summary"].items()}
        return d


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def _float_back(v):
    if v in ("nan", "inf", "-inf"):
        return float(v)
    return v


def write_metrics(report: RunReport, path, fmt: str = "csv") -> Path:
    """Write ``report``; CSV holds the step table, JSON the full report."""
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}; choose csv or json")
    path = Path(path)
    try:
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == "json":
            path.write_text(json.dumps(_json_safe(report.to_dict()), indent=1))
        else:
            with path.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(STEP_FIELDS)
                for r in report.steps:
                    w.writerow([repr(getattr(r, k)) if isinstance(getattr(r, k), float)
                                else getattr(r, k) for k in STEP_FIELDS])
    except OSError as exc:
        raise OSError(f"cannot write metrics to {path}: {exc}") from exc
    return path


_CASTS = {"arm": str, "step": int, "objective": float, "grad_variance": float,
          "metric": float, "samples": int, "function_evals": int,
          "elapsed_ms": float, "diverged": lambda s: s == "True"}


def read_metrics(path, fmt: str | None = None) -> RunReport:
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".").lower()
    if fmt not in FORMATS:
        raise ValueError(f"cannot infer report format of {path}")
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read metrics from {path}: {exc}") from exc
    if fmt == "json":
        data = json.loads(text)
        for s in data.get("steps", []):
            for k in ("objective", "grad_variance", "metric", "elapsed_ms"):
                s[k] = float(_float_back(s[k]))
        return RunReport.from_dict(data)
    rows = list(csv.DictReader(text.splitlines()))
    steps = [StepRecord(**{k: _CASTS[k](row[k]) for k in STEP_FIELDS}) for row in rows]
    return RunReport(experiment=path.stem, steps=steps)
