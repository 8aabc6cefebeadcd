"""Aggregate a persisted campaign into a CSV table and two SVG plots.

Plots show detection rate and mean injected size against the query budget,
one series per lambda plus the size-matched random baseline, each with its
least-squares regression line. Output is a pure function of the traces, so
re-running on an unchanged campaign reproduces the files byte for byte.
"""
from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from ..exceptions import EmptyCampaign
from ..optimizer import read_trace

CSV_COLUMNS = ("lambda", "budget", "mode", "label_mode", "detection_rate",
               "mean_penalty", "mean_injected_size", "mean_query_seconds")

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
           "#e377c2", "#17becf", "#bcbd22")
BASELINE_COLOR = "#7f7f7f"


@dataclass(frozen=True)
class CellSummary:
    """Aggregate of every run sharing (lambda, budget, mode, label_mode)."""
    regularization: float
    budget: int
    mode: str
    label_mode: str
    detection_rate: float
    mean_penalty: float
    mean_injected_size: float
    mean_queries: float
    mean_query_seconds: float
    mean_best_F: float
    n_runs: int

    def csv_row(self) -> Tuple:
        return (repr(self.regularization), self.budget, self.mode,
                self.label_mode, repr(self.detection_rate),
                repr(self.mean_penalty), repr(self.mean_injected_size),
                repr(self.mean_query_seconds))


@dataclass(frozen=True)
class BaselineSummary:
    """Random padding matched in size to the runs of one campaign cell."""
    mode: str
    regularization: float
    budget: int
    detection_rate: float
    mean_injected_size: float
    n_runs: int


@dataclass
class CampaignReport:
    cells: List[CellSummary]
    baseline: List[BaselineSummary]
    n_failed: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for cell in self.cells:
            writer.writerow(cell.csv_row())
        return buf.getvalue()

    def baseline_for(self, regularization, budget, mode) -> BaselineSummary:
        for b in self.baseline:
            if (math.isclose(b.regularization, regularization)
                    and b.budget == budget and b.mode == str(mode)):
                return b
        raise KeyError((regularization, budget, mode))

    def cell(self, regularization, budget, mode, label_mode="soft") -> CellSummary:
        for c in self.cells:
            if (math.isclose(c.regularization, regularization) and c.budget == budget
                    and c.mode == str(mode) and c.label_mode == label_mode):
                return c
        raise KeyError((regularization, budget, mode, label_mode))


def _final_record(trace_path: Path) -> dict:
    records = read_trace(trace_path)
    for rec in reversed(records):
        if rec.get("final"):
            return rec
    raise EmptyCampaign(f"{trace_path} has no final record")


def load_campaign(campaign_dir) -> CampaignReport:
    """Aggregate every ``trace.jsonl`` below ``campaign_dir``."""
    root = Path(campaign_dir)
    groups: Dict[tuple, List[dict]] = defaultdict(list)
    for trace in sorted(root.glob("*/*/*/*/trace.jsonl")):
        rel = trace.relative_to(root).parts
        if rel[0] == "baseline":
            continue
        rec = _final_record(trace)
        cfg = rec.get("config", {})
        key = (float(cfg.get("regularization", float(rel[1]))),
               int(cfg.get("query_budget", int(rel[2]))),
               cfg.get("mode", rel[0]), rec.get("label_mode", "soft"))
        groups[key].append(rec)
    if not groups:
        raise EmptyCampaign(f"no traces under {root}")

    cells = []
    for key in sorted(groups):
        recs = groups[key]
        lam, T, mode, label_mode = key
        cells.append(CellSummary(
            regularization=lam, budget=T, mode=mode, label_mode=label_mode,
            detection_rate=float(np.mean([not r["evasive"] for r in recs])),
            mean_penalty=float(np.mean([r["best_penalty"] for r in recs])),
            mean_injected_size=float(np.mean([r["injected_size"] for r in recs])),
            mean_queries=float(np.mean([r["q"] for r in recs])),
            mean_query_seconds=float(np.mean([r["seconds_per_query"]
                                              for r in recs])),
            mean_best_F=float(np.mean([r["best_F"] for r in recs])),
            n_runs=len(recs)))

    base: Dict[tuple, List[dict]] = defaultdict(list)
    for doc_path in sorted(root.glob("baseline/*/*/*/*.json")):
        mode, lam, T = doc_path.relative_to(root).parts[1:4]
        base[(mode, float(lam), int(T))].append(json.loads(doc_path.read_text()))
    baseline = [BaselineSummary(mode, lam, T,
                                float(np.mean([d["detected"] for d in docs])),
                                float(np.mean([d["injected_size"] for d in docs])),
                                len(docs))
                for (mode, lam, T), docs in sorted(base.items())]

    n_failed = 0
    failures = root / "failures.jsonl"
    if failures.exists():
        n_failed = sum(1 for line in failures.read_text().splitlines() if line)
    return CampaignReport(cells, baseline, n_failed)


# -- SVG ---------------------------------------------------------------------

def least_squares(xs: Sequence[float], ys: Sequence[float]) -> Tuple[float, float]:
    """Slope and intercept of the least-squares line; flat if degenerate."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if len(x) < 2 or np.ptp(x) == 0:
        return 0.0, float(y.mean())
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _tick_label(v: float) -> str:
    if v != 0 and (abs(v) >= 1e5 or abs(v) < 1e-2):
        return f"{v:.1e}"
    return f"{v:.4g}"


def svg_plot(series: List[dict], title: str, xlabel: str, ylabel: str,
             width: int = 640, height: int = 420) -> str:
    """Scatter plus regression line per series.

    ``series`` items hold ``label``, ``color``, ``points`` (list of (x, y))
    and an optional ``dashed`` flag.
    """
    ml, mr, mt, mb = 70, 170, 40, 50
    pw, ph = width - ml - mr, height - mt - mb
    pts = [p for s in series for p in s["points"]]
    xs = [p[0] for p in pts] or [0.0, 1.0]
    ys = [p[1] for p in pts] or [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(0.0, min(ys)), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y1 = y0 + 1
    y1 += 0.05 * (y1 - y0)

    def sx(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return mt + ph - (v - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
           f'height="{height}" viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" '
           f'font-family="sans-serif" font-size="15">{title}</text>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" '
           'stroke="black"/>']
    for i in range(5):
        xv = x0 + (x1 - x0) * i / 4
        yv = y0 + (y1 - y0) * i / 4
        out.append(f'<text x="{_fmt(sx(xv))}" y="{mt + ph + 16}" '
                   'text-anchor="middle" font-family="sans-serif" '
                   f'font-size="10">{_tick_label(xv)}</text>')
        out.append(f'<text x="{ml - 6}" y="{_fmt(sy(yv) + 3)}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="10">{_tick_label(yv)}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 12}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="12">{xlabel}</text>')
    out.append(f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="12" '
               f'transform="rotate(-90 16 {mt + ph / 2:.1f})">{ylabel}</text>')

    for n, s in enumerate(series):
        color, label = s["color"], s["label"]
        dash = ' stroke-dasharray="5,4"' if s.get("dashed") else ""
        out.append(f'<g class="series" data-label="{label}">')
        for x, y in s["points"]:
            out.append(f'<circle cx="{_fmt(sx(x))}" cy="{_fmt(sy(y))}" r="3.5" '
                       f'fill="{color}"/>')
        if s["points"]:
            slope, icpt = least_squares([p[0] for p in s["points"]],
                                        [p[1] for p in s["points"]])
            lo = min(p[0] for p in s["points"])
            hi = max(p[0] for p in s["points"])
            out.append(f'<line x1="{_fmt(sx(lo))}" y1="{_fmt(sy(slope * lo + icpt))}" '
                       f'x2="{_fmt(sx(hi))}" y2="{_fmt(sy(slope * hi + icpt))}" '
                       f'stroke="{color}" stroke-width="2"{dash}/>')
        ly = mt + 12 + 18 * n
        out.append(f'<line x1="{width - mr + 12}" y1="{ly}" x2="{width - mr + 34}" '
                   f'y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>')
        out.append(f'<text x="{width - mr + 40}" y="{ly + 4}" '
                   f'font-family="sans-serif" font-size="11">{label}</text>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _series(report: CampaignReport, metric: str, mode: str, label_mode: str):
    lams = sorted({c.regularization for c in report.cells
                   if c.mode == mode and c.label_mode == label_mode}, reverse=True)
    series = []
    for n, lam in enumerate(lams):
        pts = sorted((c.budget, getattr(c, metric)) for c in report.cells
                     if c.regularization == lam and c.mode == mode
                     and c.label_mode == label_mode)
        series.append({"label": f"lambda={lam:g}",
                       "color": PALETTE[n % len(PALETTE)], "points": pts})
    # one baseline point per budget, pooled over the lambda cells
    pooled: Dict[int, List[Tuple[float, int]]] = defaultdict(list)
    for b in report.baseline:
        if b.mode == mode:
            pooled[b.budget].append((getattr(b, metric), b.n_runs))
    bpts = sorted((T, sum(v * n for v, n in vals) / sum(n for _, n in vals))
                  for T, vals in pooled.items())
    if bpts:
        series.append({"label": "random", "color": BASELINE_COLOR,
                       "points": bpts, "dashed": True})
    return series


def write_report(campaign_dir, out_dir=None) -> Dict[str, Path]:
    """Write ``report.csv`` plus detection and size plots per (mode, label).

    Returns the written paths keyed by a short name.
    """
    report = load_campaign(campaign_dir)
    out = Path(out_dir) if out_dir is not None else Path(campaign_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / "report.csv"}
    paths["csv"].write_text(report.to_csv())
    for mode, label_mode in sorted({(c.mode, c.label_mode) for c in report.cells}):
        tag = f"{mode}-{label_mode}"
        det = out / f"detection_rate-{tag}.svg"
        det.write_text(svg_plot(_series(report, "detection_rate", mode, label_mode),
                                f"Detection rate ({mode}, {label_mode}-label)",
                                "queries (budget T)", "detection rate"))
        size = out / f"payload_size-{tag}.svg"
        size.write_text(svg_plot(_series(report, "mean_injected_size", mode,
                                         label_mode),
                                 f"Injected size ({mode}, {label_mode}-label)",
                                 "queries (budget T)", "mean injected bytes"))
        paths[f"detection:{tag}"] = det
        paths[f"size:{tag}"] = size
    return paths
