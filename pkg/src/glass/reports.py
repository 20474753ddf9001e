"""Long-format metrics rows and the pretraining-vs-downstream correlation report."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError, ParseError, SchemaError

METRIC_NAMES = ("train_loss", "val_gaze_corr", "mae", "pearson_r", "macro_f1")
REPORT_HEADER = ["run_id", "stage", "config_hash", "metric", "value", "seed"]


@dataclass
class MetricRow:
    run_id: str
    stage: str  # pretrain | finetune | baseline | eval
    config_hash: str
    metric: str
    value: float
    seed: int

    def __post_init__(self):
        if self.metric not in METRIC_NAMES:
            raise SchemaError(f"unknown metric {self.metric!r}; expected one of {METRIC_NAMES}")


def write_metric_rows(path, rows: list[MetricRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_HEADER)
        for r in rows:
            writer.writerow([r.run_id, r.stage, r.config_hash, r.metric, repr(float(r.value)), r.seed])


def read_metric_rows(path) -> list[MetricRow]:
    rows: list[MetricRow] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"empty metrics file {path}") from None
        if header != REPORT_HEADER:
            raise SchemaError(f"metrics header {header} != {REPORT_HEADER}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append(MetricRow(row[0], row[1], row[2], row[3], float(row[4]), int(row[5])))
            except (ValueError, IndexError) as exc:
                raise ParseError(f"{path} line {line_no}: {exc}") from None
    return rows


def _pearson(x: np.ndarray, y: np.ndarray) -> float | None:
    if x.std() == 0.0 or y.std() == 0.0:
        return None
    return float(((x - x.mean()) * (y - y.mean())).mean() / (x.std() * y.std()))


@dataclass
class CorrelationReport:
    # one scatter point per config hash: (val_gaze_corr, downstream metric value)
    points: dict[str, list[tuple[str, float, float]]]  # metric -> [(hash, corr, value)]
    correlations: dict[str, float | None]  # metric -> Pearson r (None if degenerate)


def correlate_report(pretrain_rows: list[MetricRow], downstream_rows: list[MetricRow]) -> CorrelationReport:
    """Join on config hash; correlate validation gaze correlation against each
    downstream metric. MAE enters negated so that higher is better on every axis."""
    corr_by_hash: dict[str, list[float]] = {}
    for r in pretrain_rows:
        if r.metric == "val_gaze_corr":
            corr_by_hash.setdefault(r.config_hash, []).append(r.value)
    down_by_hash: dict[str, dict[str, list[float]]] = {}
    for r in downstream_rows:
        if r.metric in ("mae", "pearson_r", "macro_f1"):
            down_by_hash.setdefault(r.config_hash, {}).setdefault(r.metric, []).append(r.value)

    points: dict[str, list[tuple[str, float, float]]] = {}
    for h in sorted(set(corr_by_hash) & set(down_by_hash)):
        x = float(np.mean(corr_by_hash[h]))
        for metric, values in down_by_hash[h].items():
            y = float(np.mean(values))
            if metric == "mae":
                y = -y
            points.setdefault(metric, []).append((h, x, y))

    n_joined = len({h for pts in points.values() for h, _, _ in pts})
    if n_joined < 3:
        raise InsufficientDataError(
            f"correlation report needs at least 3 joined runs, got {n_joined}")

    correlations = {}
    for metric, pts in points.items():
        xs = np.array([p[1] for p in pts])
        ys = np.array([p[2] for p in pts])
        correlations[metric] = _pearson(xs, ys) if len(pts) >= 3 else None
    return CorrelationReport(points=points, correlations=correlations)


def write_correlation_report(path, report: CorrelationReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "config_hash", "val_gaze_corr", "downstream_value", "pearson_r"])
        for metric in sorted(report.points):
            r = report.correlations[metric]
            for h, x, y in report.points[metric]:
                writer.writerow([metric, h, repr(x), repr(y), "" if r is None else repr(r)])
