"""Structured results container with line-delimited serialization, a text
table, and plot rendering for per-class scores, regression scatter, and
label-budget curves.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError


@dataclass
class MetricsReport:
    """Evaluation results plus the exact protocol configuration that produced
    them. Fields irrelevant to the protocol stay None/empty."""

    protocol: dict = field(default_factory=dict)
    auroc_micro: float | None = None
    f1_micro: float | None = None
    per_class_auroc: dict = field(default_factory=dict)
    mae: float | None = None
    rmse: float | None = None
    map_per_class: dict = field(default_factory=dict)
    map_mean: float | None = None
    curves: list = field(default_factory=list)
    regression_pairs: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("auroc_micro", "f1_micro", "map_mean"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise DataError(f"{name}={value} outside [0, 1]")
        for cls, value in {**self.per_class_auroc, **self.map_per_class}.items():
            if not 0.0 <= value <= 1.0:
                raise DataError(f"per-class score {cls}={value} outside [0, 1]")
        if self.mae is not None and self.mae < 0:
            raise DataError("mae must be non-negative")
        if self.rmse is not None and self.mae is not None:
            if self.rmse < self.mae - 1e-12 * max(1.0, self.mae):
                raise DataError(f"rmse {self.rmse} < mae {self.mae}")


def report_to_jsonl(report: MetricsReport) -> str:
    lines = [json.dumps({"record": "protocol", **report.protocol}, sort_keys=True)]
    if report.config:
        lines.append(json.dumps({"record": "config", "config": report.config},
                                sort_keys=True))
    for name in ("auroc_micro", "f1_micro", "mae", "rmse", "map_mean"):
        value = getattr(report, name)
        if value is not None:
            lines.append(json.dumps(
                {"record": "metric", "name": name, "value": value}))
    for cls, value in report.per_class_auroc.items():
        lines.append(json.dumps({"record": "metric", "name": "per_class_auroc",
                                 "class": cls, "value": value}))
    for cls, value in report.map_per_class.items():
        lines.append(json.dumps({"record": "metric", "name": "map_per_class",
                                 "class": cls, "value": value}))
    for curve in report.curves:
        lines.append(json.dumps({"record": "curve", **curve}, sort_keys=True))
    for pair in report.regression_pairs:
        lines.append(json.dumps({"record": "pair", "y": pair[0], "yhat": pair[1]}))
    return "\n".join(lines) + "\n"


def report_from_jsonl(text: str) -> MetricsReport:
    report = MetricsReport()
    scalar = {"auroc_micro", "f1_micro", "mae", "rmse", "map_mean"}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"report line {lineno}: invalid JSON: {exc}") from exc
        kind = rec.get("record")
        if kind == "protocol":
            report.protocol = {k: v for k, v in rec.items() if k != "record"}
        elif kind == "config":
            report.config = rec.get("config", {})
        elif kind == "metric":
            name = rec.get("name")
            if name in scalar:
                setattr(report, name, rec["value"])
            elif name == "per_class_auroc":
                report.per_class_auroc[rec["class"]] = rec["value"]
            elif name == "map_per_class":
                report.map_per_class[rec["class"]] = rec["value"]
            else:
                raise DataError(f"report line {lineno}: unknown metric {name!r}")
        elif kind == "curve":
            report.curves.append({k: v for k, v in rec.items() if k != "record"})
        elif kind == "pair":
            report.regression_pairs.append([rec["y"], rec["yhat"]])
        else:
            raise DataError(f"report line {lineno}: unknown record {kind!r}")
    return MetricsReport(**{f: getattr(report, f) for f in (
        "protocol", "auroc_micro", "f1_micro", "per_class_auroc", "mae",
        "rmse", "map_per_class", "map_mean", "curves", "regression_pairs",
        "config")})


def write_report(report: MetricsReport, path) -> None:
    Path(path).write_text(report_to_jsonl(report))


def read_report(path) -> MetricsReport:
    return report_from_jsonl(Path(path).read_text())


def merge_reports(reports) -> MetricsReport:
    """Combine reports from different protocols into one summary; the first
    non-empty value of each scalar wins, dict and curve fields accumulate."""
    merged = MetricsReport()
    protocols = []
    for rep in reports:
        if rep.protocol:
            protocols.append(rep.protocol)
        for name in ("auroc_micro", "f1_micro", "mae", "rmse", "map_mean"):
            if getattr(merged, name) is None and getattr(rep, name) is not None:
                setattr(merged, name, getattr(rep, name))
        for cls, v in rep.per_class_auroc.items():
            merged.per_class_auroc.setdefault(cls, v)
        for cls, v in rep.map_per_class.items():
            merged.map_per_class.setdefault(cls, v)
        merged.curves.extend(rep.curves)
        merged.regression_pairs.extend(rep.regression_pairs)
        if not merged.config and rep.config:
            merged.config = rep.config
    merged.protocol = {"merged": protocols}
    return merged


def render_table(report: MetricsReport) -> str:
    rows = []
    if report.protocol:
        rows.append(("protocol", json.dumps(report.protocol, sort_keys=True)))
    for name in ("auroc_micro", "f1_micro", "mae", "rmse", "map_mean"):
        value = getattr(report, name)
        if value is not None:
            rows.append((name, f"{value:.4f}"))
    for cls in sorted(report.per_class_auroc):
        rows.append((f"auroc[{cls}]", f"{report.per_class_auroc[cls]:.4f}"))
    for cls in sorted(report.map_per_class):
        rows.append((f"mAP[{cls}]", f"{report.map_per_class[cls]:.4f}"))
    for curve in report.curves:
        pts = " ".join(f"{p['labels']}:{p['value']:.4f}" for p in curve["points"])
        rows.append((f"curve[{curve['name']}]", pts))
    if not rows:
        return "(empty report)\n"
    width = max(len(r[0]) for r in rows)
    return "\n".join(f"{name:<{width}}  {value}" for name, value in rows) + "\n"


def render_plots(report: MetricsReport, out_dir, formats=("png",)) -> list:
    """Write the applicable figures for this report; returns written paths."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def save(fig, stem):
        for fmt in formats:
            path = out_dir / f"{stem}.{fmt}"
            fig.savefig(path, bbox_inches="tight")
            written.append(path)
        plt.close(fig)

    if report.per_class_auroc:
        names = sorted(report.per_class_auroc)
        values = [report.per_class_auroc[n] for n in names]
        fig, ax = plt.subplots(figsize=(max(4, 0.7 * len(names)), 3))
        ax.bar(names, values, color="#33658a")
        ax.set_ylim(0.0, 1.0)
        ax.set_ylabel("AUROC")
        ax.tick_params(axis="x", rotation=45)
        save(fig, "per_class_auroc")

    if report.map_per_class:
        names = sorted(report.map_per_class)
        values = [report.map_per_class[n] for n in names]
        fig, ax = plt.subplots(figsize=(max(4, 0.7 * len(names)), 3))
        ax.bar(names, values, color="#758e4f")
        ax.set_ylim(0.0, 1.0)
        ax.set_ylabel("mAP")
        ax.tick_params(axis="x", rotation=45)
        save(fig, "retrieval_map")

    if report.regression_pairs:
        pairs = np.asarray(report.regression_pairs, dtype=np.float64)
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.scatter(pairs[:, 0], pairs[:, 1], s=8, alpha=0.5, color="#f26419")
        lo = float(pairs.min())
        hi = float(pairs.max())
        ax.plot([lo, hi], [lo, hi], "k--", linewidth=1)
        ax.set_xlabel("target")
        ax.set_ylabel("prediction")
        save(fig, "regression_scatter")

    if report.curves:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for curve in report.curves:
            xs = [p["labels"] for p in curve["points"]]
            ys = [p["value"] for p in curve["points"]]
            ax.plot(xs, ys, marker="o", label=curve["name"])
        ax.set_xscale("log")
        ax.set_xlabel("labeled training samples")
        ax.set_ylabel(report.curves[0].get("metric", "score"))
        ax.legend()
        save(fig, "label_budget_curves")

    return written
