"""Recording run results and computing derived metrics.

An experiment entry is a registry artifact (kind=experiment) whose
payload is a single ``result.json`` document: base metrics (finite
numbers only) plus context linking the measurement back to the plan that
produced it.  Derived metrics are computed on read, never stored, so the
recorded measurements stay the ground truth:

* ``energy_efficiency`` = throughput / power      (results per joule)
* ``cost_per_result``   = cost_rate / throughput  (currency per result;
  ``cost_rate`` is currency units per second)

``write_report`` renders a comparison table as delimited text plus one
bar-chart figure per metric.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import MetricError, NotFoundError
from .query import Query
from .registry import Artifact, Registry

RESULT_FILE = "result.json"
SCHEMA_VERSION = 1

DERIVED_METRICS = ("energy_efficiency", "cost_per_result")
_DERIVATIONS = {
    "energy_efficiency": ("throughput", "power"),
    "cost_per_result": ("cost_rate", "throughput"),
}


@dataclass
class ExperimentEntry:
    uid: str
    alias: str | None
    tags: frozenset[str]
    metrics: dict[str, float]
    context: dict = field(default_factory=dict)
    path: Path | None = None

    def label(self) -> str:
        return self.alias or self.uid


def _validate_metrics(metrics: dict) -> dict[str, float]:
    if not metrics:
        raise MetricError("at least one metric is required")
    clean: dict[str, float] = {}
    for name, value in metrics.items():
        try:
            number = float(value)
        except (TypeError, ValueError):
            raise MetricError(f"metric {name!r} is not a number: {value!r}")
        if not math.isfinite(number):
            raise MetricError(f"metric {name!r} must be finite, got {number}")
        clean[str(name)] = number
    return clean


def record(registry: Registry, tags, metrics: dict,
           context: dict | None = None,
           alias: str | None = None) -> ExperimentEntry:
    """Store a measurement as an experiment artifact in the local repo."""
    clean = _validate_metrics(metrics)
    context = dict(context or {})
    context.setdefault("plan_digest", empty_plan_digest())
    context.setdefault("timestamp", time.time())
    artifact = registry.add_artifact("experiment", alias, tags,
                                     scaffold=False)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "metrics": clean,
        "context": context,
    }
    (artifact.path / RESULT_FILE).write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return _entry_from_artifact(artifact)


def empty_plan_digest() -> str:
    from .cache import dep_signature
    return dep_signature([])


def _entry_from_artifact(artifact: Artifact) -> ExperimentEntry:
    result_path = artifact.path / RESULT_FILE
    if not result_path.is_file():
        raise NotFoundError(f"experiment {artifact.describe()} has no "
                            f"{RESULT_FILE}")
    doc = json.loads(result_path.read_text(encoding="utf-8"))
    return ExperimentEntry(
        uid=artifact.id.uid,
        alias=artifact.id.alias,
        tags=artifact.tags,
        metrics=_validate_metrics(doc.get("metrics") or {}),
        context=dict(doc.get("context") or {}),
        path=artifact.path,
    )


def load_entries(registry: Registry, query: Query) -> list[ExperimentEntry]:
    entries = [_entry_from_artifact(a)
               for a in registry.find(query, "experiment")]
    entries.sort(key=lambda e: (e.label(), e.uid))
    return entries


def derive_metric(entry: ExperimentEntry, name: str) -> float:
    """Compute a derived metric from the entry's base measurements."""
    if name not in _DERIVATIONS:
        raise MetricError(f"unknown derived metric {name!r} "
                          f"(available: {', '.join(DERIVED_METRICS)})")
    numerator_key, denominator_key = _DERIVATIONS[name]
    missing = [k for k in (numerator_key, denominator_key)
               if k not in entry.metrics]
    if missing:
        raise MetricError(
            f"cannot derive {name} for {entry.label()}: missing base "
            f"metric(s) {', '.join(missing)}")
    denominator = entry.metrics[denominator_key]
    if denominator == 0:
        raise MetricError(f"cannot derive {name} for {entry.label()}: "
                          f"{denominator_key} is zero")
    return entry.metrics[numerator_key] / denominator


def _derivable(entry: ExperimentEntry, name: str) -> float | None:
    try:
        return derive_metric(entry, name)
    except MetricError:
        return None


def report_rows(entries: list[ExperimentEntry]) -> tuple[list[str], list[list]]:
    """Tabular comparison: one row per entry, base then derived metrics."""
    base_metrics = sorted({m for e in entries for m in e.metrics})
    header = ["experiment", "uid", "tags", *base_metrics, *DERIVED_METRICS]
    rows = []
    for entry in entries:
        row: list = [entry.label(), entry.uid, ",".join(sorted(entry.tags))]
        for metric in base_metrics:
            value = entry.metrics.get(metric)
            row.append("" if value is None else repr(value))
        for name in DERIVED_METRICS:
            value = _derivable(entry, name)
            row.append("" if value is None else repr(value))
        rows.append(row)
    return header, rows


def write_report(entries: list[ExperimentEntry], out_dir: Path) -> dict:
    """Write ``metrics.csv`` plus one bar-chart PNG per metric column."""
    if not entries:
        raise NotFoundError("no experiment entries match the selector")
    out_dir.mkdir(parents=True, exist_ok=True)
    header, rows = report_rows(entries)

    csv_path = out_dir / "metrics.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)

    figure_paths = _write_figures(entries, header[3:], out_dir / "figures")
    return {"csv": str(csv_path), "figures": [str(p) for p in figure_paths],
            "entries": len(entries)}


def _write_figures(entries: list[ExperimentEntry], metric_names: list[str],
                   fig_dir: Path) -> list[Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig_dir.mkdir(parents=True, exist_ok=True)
    labels = [e.label() for e in entries]
    written = []
    for metric in metric_names:
        values = []
        for entry in entries:
            if metric in DERIVED_METRICS:
                values.append(_derivable(entry, metric))
            else:
                values.append(entry.metrics.get(metric))
        pairs = [(label, v) for label, v in zip(labels, values)
                 if v is not None]
        if not pairs:
            continue
        fig, ax = plt.subplots(figsize=(max(4, len(pairs) * 1.2), 3.5))
        ax.bar([p[0] for p in pairs], [p[1] for p in pairs],
               color="#4878a8")
        ax.set_ylabel(metric)
        ax.set_title(metric)
        ax.tick_params(axis="x", rotation=30)
        fig.tight_layout()
        path = fig_dir / f"{metric}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        written.append(path)
    return written
