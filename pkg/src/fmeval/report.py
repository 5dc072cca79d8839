"""Run-directory output: report documents, metric tables and SVG plots."""

from __future__ import annotations

import csv
import io
import json
import math
from html import escape
from pathlib import Path
from typing import Iterable, Sequence

from fmeval.evaluation import LLM_WITH_DOMAIN, LLM_WITHOUT_DOMAIN, MLP, EvalReport
from fmeval.util import atomic_write_text

METRIC_COLUMNS = ("label", "dataset_id", "condition", "train_n", "n_test", "accuracy", "accuracy_se",
                  "mse", "rmse", "n_extraction_failures", "n_repeats", "repeat_sd")
TABLE1_SIZES = (100, 10000)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6g}"
    return str(v)


def write_report(report: EvalReport, run_dir: str | Path) -> Path:
    path = Path(run_dir) / "reports" / f"{report.dataset_id}__{report.label}.json"
    atomic_write_text(path, json.dumps(report.to_dict(), indent=2, sort_keys=True, allow_nan=True) + "\n")
    if report.captured_rules is not None:
        atomic_write_text(Path(run_dir) / "rules" / f"{report.dataset_id}__{report.label}.txt",
                          report.captured_rules)
    return path


def load_reports(run_dir: str | Path) -> list[EvalReport]:
    paths = sorted((Path(run_dir) / "reports").glob("*.json"))
    return [EvalReport.from_dict(json.loads(p.read_text(encoding="utf-8"))) for p in paths]


def metrics_csv(reports: Iterable[EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in sorted(reports, key=lambda r: (r.dataset_id, r.label)):
        m = r.metrics
        w.writerow([_fmt(x) for x in (r.label, r.dataset_id, r.condition, r.train_n, m.n_test, m.accuracy,
                                      m.accuracy_se, m.mse, m.rmse, m.n_extraction_failures, m.n_repeats,
                                      m.repeat_sd)])
    return buf.getvalue()


def write_metrics(run_dir: str | Path) -> Path:
    path = Path(run_dir) / "metrics.csv"
    atomic_write_text(path, metrics_csv(load_reports(run_dir)))
    return path


# -- comparison table ------------------------------------------------------------


def _size_label(n: int) -> str:
    exp = math.log10(n) if n > 0 else 0
    return f"MLP (n=10^{int(round(exp))})" if n > 0 and abs(exp - round(exp)) < 1e-9 else f"MLP (n={n})"


def _cell(r: EvalReport | None) -> str:
    if r is None:
        return "n/a"
    m = r.metrics
    if m.accuracy is not None:
        return f"{100 * m.accuracy:.1f} ± {100 * (m.accuracy_se or 0):.2f}"
    return f"MSE {m.mse:.4g}"


def comparison_table(reports: Sequence[EvalReport]) -> tuple[list[str], list[list[str]]]:
    """Header and rows: one row per dataset, columns for both LLM conditions and each MLP size."""
    sizes = sorted(set(TABLE1_SIZES) | {r.train_n for r in reports if r.condition == MLP})
    header = ["dataset", "LLM w/o domain", "LLM w/ domain"] + [_size_label(n) for n in sizes]
    rows = []
    for ds in sorted({r.dataset_id for r in reports}):
        mine = [r for r in reports if r.dataset_id == ds]
        by_cond = {r.condition: r for r in mine if r.condition in (LLM_WITHOUT_DOMAIN, LLM_WITH_DOMAIN)}
        by_size = {r.train_n: r for r in mine if r.condition == MLP}
        rows.append([ds, _cell(by_cond.get(LLM_WITHOUT_DOMAIN)), _cell(by_cond.get(LLM_WITH_DOMAIN))]
                    + [_cell(by_size.get(n)) for n in sizes])
    return header, rows


def render_text_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(c)) for c in col) for col in zip(header, *rows)]
    line = "+" + "+".join("-" * (w + 2) for w in widths) + "+"

    def fmt(cells):
        return "| " + " | ".join(str(c).ljust(w) for c, w in zip(cells, widths)) + " |"

    return "\n".join([line, fmt(header), line, *[fmt(r) for r in rows], line]) + "\n"


def table_csv(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# -- SVG -------------------------------------------------------------------------

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


class SvgPlot:
    """Minimal line/scatter plot written as standalone SVG."""

    def __init__(self, title: str, xlabel: str = "x", ylabel: str = "y", width: int = 640, height: int = 400):
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        self.width, self.height = width, height
        self.series: list[tuple[str, str, list[float], list[float], str]] = []

    def line(self, xs, ys, label: str, color: str | None = None):
        self.series.append(("line", label, list(map(float, xs)), list(map(float, ys)), color or self._next()))

    def points(self, xs, ys, label: str, color: str | None = None):
        self.series.append(("points", label, list(map(float, xs)), list(map(float, ys)), color or self._next()))

    def _next(self) -> str:
        return PALETTE[len(self.series) % len(PALETTE)]

    def render(self) -> str:
        left, right, top, bottom = 60, 170, 36, 48
        pw, ph = self.width - left - right, self.height - top - bottom
        xs = [x for s in self.series for x in s[2] if math.isfinite(x)]
        ys = [y for s in self.series for y in s[3] if math.isfinite(y)]
        x0, x1 = (min(xs), max(xs)) if xs else (0.0, 1.0)
        y0, y1 = (min(ys), max(ys)) if ys else (0.0, 1.0)
        if x1 == x0:
            x0, x1 = x0 - 1, x1 + 1
        if y1 == y0:
            y0, y1 = y0 - 1, y1 + 1
        pad = 0.05 * (y1 - y0)
        y0, y1 = y0 - pad, y1 + pad

        def sx(x):
            return left + (x - x0) / (x1 - x0) * pw

        def sy(y):
            return top + (1 - (y - y0) / (y1 - y0)) * ph

        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
               f'viewBox="0 0 {self.width} {self.height}" font-family="sans-serif" font-size="12">',
               f'<rect width="{self.width}" height="{self.height}" fill="white"/>',
               f'<text x="{left + pw / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(self.title)}</text>',
               f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
        for i in range(5):
            fx = x0 + (x1 - x0) * i / 4
            fy = y0 + (y1 - y0) * i / 4
            out.append(f'<text x="{sx(fx):.1f}" y="{top + ph + 16}" text-anchor="middle">{fx:.4g}</text>')
            out.append(f'<text x="{left - 6}" y="{sy(fy) + 4:.1f}" text-anchor="end">{fy:.4g}</text>')
        out.append(f'<text x="{left + pw / 2:.1f}" y="{self.height - 10}" text-anchor="middle">{escape(self.xlabel)}</text>')
        out.append(f'<text x="14" y="{top + ph / 2:.1f}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {top + ph / 2:.1f})">{escape(self.ylabel)}</text>')
        for k, (kind, label, sxs, sys_, color) in enumerate(self.series):
            pts = [(sx(x), sy(y)) for x, y in zip(sxs, sys_) if math.isfinite(x) and math.isfinite(y)]
            if kind == "line" and pts:
                path = " ".join(f"{a:.2f},{b:.2f}" for a, b in pts)
                out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.6"/>')
            else:
                out.extend(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="2.5" fill="{color}"/>' for a, b in pts)
            ly = top + 14 + 18 * k
            out.append(f'<rect x="{left + pw + 12}" y="{ly - 8}" width="12" height="8" fill="{color}"/>')
            out.append(f'<text x="{left + pw + 30}" y="{ly}">{escape(label)}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"
