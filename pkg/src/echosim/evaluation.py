"""Correlation-curve comparison metrics and run reports.

Reference-frame entries (identically 1 by construction: the ES frame in
ES mode, t=0 in frame-to-frame mode) are excluded from every aggregate;
they carry no information. Only entries valid in both inputs count.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .correlation import CorrelationCurves
from .errors import MetricError


def _common_mask(a: CorrelationCurves, b: CorrelationCurves) -> np.ndarray:
    if a.values.shape != b.values.shape:
        raise MetricError(
            f"curve shapes differ: {a.values.shape} vs {b.values.shape}")
    if a.mode != b.mode:
        raise MetricError(f"curve modes differ: {a.mode} vs {b.mode}")
    return a.informative_mask() & b.informative_mask()


def curve_mae(real: CorrelationCurves, sim: CorrelationCurves) -> float:
    """Mean absolute error over common valid, informative entries."""
    mask = _common_mask(real, sim)
    if not mask.any():
        raise MetricError("no common valid entries; MAE is undefined")
    return float(np.abs(real.values[mask] - sim.values[mask]).mean())


def average_correlation(curves: CorrelationCurves) -> float:
    """Mean correlation over valid entries, reference frame excluded."""
    mask = curves.informative_mask()
    if not mask.any():
        raise MetricError("no valid entries; average is undefined")
    return float(curves.values[mask].mean())


@dataclass(frozen=True)
class ReportRow:
    name: str
    f2f_avg: float
    f2f_mae: float | None
    es_avg: float
    es_mae: float | None


def build_report(runs) -> list[ReportRow]:
    """Assemble Table-style rows from evaluated runs.

    `runs` is an iterable of dicts with keys: name, sim_es, sim_f2f and
    optionally real_es / real_f2f (CorrelationCurves). MAE columns are
    None when the matching real curves are absent.
    """
    rows = []
    for run in runs:
        sim_es: CorrelationCurves = run["sim_es"]
        sim_f2f: CorrelationCurves = run["sim_f2f"]
        real_es = run.get("real_es")
        real_f2f = run.get("real_f2f")
        rows.append(ReportRow(
            name=run["name"],
            f2f_avg=average_correlation(sim_f2f),
            f2f_mae=curve_mae(real_f2f, sim_f2f) if real_f2f is not None else None,
            es_avg=average_correlation(sim_es),
            es_mae=curve_mae(real_es, sim_es) if real_es is not None else None,
        ))
    return rows


def _fmt(value) -> str:
    return "" if value is None else f"{value:.6f}"


def write_report_csv(path, rows: list[ReportRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["simulation_type", "f2f_avg_corr", "f2f_mae",
                         "es_avg_corr", "es_mae"])
        for row in rows:
            writer.writerow([row.name, _fmt(row.f2f_avg), _fmt(row.f2f_mae),
                             _fmt(row.es_avg), _fmt(row.es_mae)])


def write_report_md(path, rows: list[ReportRow]) -> None:
    lines = [
        "| Simulation type | f2f avg corr | f2f MAE | ES avg corr | ES MAE |",
        "|---|---|---|---|---|",
    ]
    for row in rows:
        lines.append(
            f"| {row.name} | {_fmt(row.f2f_avg)} | {_fmt(row.f2f_mae)} "
            f"| {_fmt(row.es_avg)} | {_fmt(row.es_mae)} |")
    Path(path).write_text("\n".join(lines) + "\n")
