"""Rendering of experiment results: text tables, CSVs and SVG ROC plots.

Table cells show integer percentages rounded half-up; CSVs keep full float
precision (repr round trip).
"""
from __future__ import annotations

import io
import csv
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

from .errors import NoEvaluableSlides
from .metrics import MetricsReport, RocCurve, macro_average


@dataclass(frozen=True)
class ExperimentResult:
    experiment_id: int
    stain: str  # evaluation set label, e.g. "PAS_20" or "HE_16"
    reports: tuple  # per-slide MetricsReport


def percent(value: float) -> int:
    """Round a [0, 1] fraction to integer percent, halves up."""
    return int(Decimal(value * 100).quantize(Decimal("1"), rounding=ROUND_HALF_UP))


def render_report_table(results) -> str:
    """Fixed-width text table of macro sensitivity/specificity per experiment."""
    results = list(results)
    if not results:
        raise NoEvaluableSlides("no experiment results to render")
    header = f"{'experiment':<12}{'eval set':<10}{'slides':>7}  {'avg sensitivity / specificity'}"
    lines = [header, "-" * len(header)]
    for res in results:
        sens, spec = macro_average(res.reports)
        lines.append(
            f"{res.experiment_id:<12}{res.stain:<10}{len(res.reports):>7}  "
            f"{percent(sens)}% / {percent(spec)}%"
        )
    return "\n".join(lines) + "\n"


_CSV_FIELDS = [
    "kind", "experiment_id", "stain", "slide_id", "tp", "fp", "fn",
    "tissue_area", "gt_area", "fp_area", "tn_area", "sensitivity", "specificity",
]


def report_csv(results) -> str:
    """One experiment summary row plus one row per slide, full precision."""
    results = list(results)
    if not results:
        raise NoEvaluableSlides("no experiment results to render")
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=_CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for res in results:
        sens, spec = macro_average(res.reports)
        writer.writerow({
            "kind": "experiment",
            "experiment_id": res.experiment_id,
            "stain": res.stain,
            "slide_id": "",
            "tp": "", "fp": "", "fn": "",
            "tissue_area": "", "gt_area": "", "fp_area": "", "tn_area": "",
            "sensitivity": repr(sens),
            "specificity": repr(spec),
        })
        for rep in res.reports:
            writer.writerow({
                "kind": "slide",
                "experiment_id": res.experiment_id,
                "stain": res.stain,
                "slide_id": rep.slide_id,
                "tp": rep.tp, "fp": rep.fp, "fn": rep.fn,
                "tissue_area": repr(rep.tissue_area),
                "gt_area": repr(rep.gt_area),
                "fp_area": repr(rep.fp_area),
                "tn_area": repr(rep.tn_area),
                "sensitivity": "" if rep.sensitivity is None else repr(rep.sensitivity),
                "specificity": repr(rep.specificity),
            })
    return buf.getvalue()


def parse_report_csv(text: str) -> list:
    """Rows of report_csv with float fields restored exactly."""
    rows = []
    for row in csv.DictReader(io.StringIO(text)):
        for key in ("tissue_area", "gt_area", "fp_area", "tn_area",
                    "sensitivity", "specificity"):
            row[key] = float(row[key]) if row[key] else None
        for key in ("tp", "fp", "fn"):
            row[key] = int(row[key]) if row[key] else None
        rows.append(row)
    return rows


def roc_csv(curves) -> str:
    """label,threshold,tpr,fpr rows at full precision."""
    curves = list(curves)
    if not curves:
        raise NoEvaluableSlides("no ROC curves to render")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["label", "threshold", "tpr", "fpr"])
    for curve in curves:
        for t, tpr, fpr in curve.points:
            writer.writerow([curve.label, repr(t), repr(tpr), repr(fpr)])
    return buf.getvalue()


def parse_roc_csv(text: str) -> list:
    rows = []
    for row in csv.DictReader(io.StringIO(text)):
        rows.append((row["label"], float(row["threshold"]),
                     float(row["tpr"]), float(row["fpr"])))
    return rows


_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]

_MARGIN = 60.0
_PLOT = 440.0


def _sx(fpr: float) -> float:
    return _MARGIN + fpr * _PLOT


def _sy(tpr: float) -> float:
    return _MARGIN + (1.0 - tpr) * _PLOT


def render_roc_svg(curves) -> str:
    """Deterministic standalone SVG with [0,1] x [0,1] axes."""
    curves = list(curves)
    if not curves:
        raise NoEvaluableSlides("no ROC curves to render")
    side = 2 * _MARGIN + _PLOT
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{side:.0f}" height="{side:.0f}" '
        f'viewBox="0 0 {side:.0f} {side:.0f}">',
        f'<rect x="{_MARGIN}" y="{_MARGIN}" width="{_PLOT}" height="{_PLOT}" '
        'fill="white" stroke="black" stroke-width="1"/>',
    ]
    for k in range(6):
        v = k / 5
        x = _sx(v)
        y = _sy(v)
        parts.append(
            f'<line x1="{x:.1f}" y1="{_MARGIN + _PLOT}" x2="{x:.1f}" '
            f'y2="{_MARGIN + _PLOT + 6}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{x:.1f}" y="{_MARGIN + _PLOT + 22}" font-size="12" '
            f'text-anchor="middle">{v:.1f}</text>'
        )
        parts.append(
            f'<line x1="{_MARGIN - 6}" y1="{y:.1f}" x2="{_MARGIN}" y2="{y:.1f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{_MARGIN - 10}" y="{y + 4:.1f}" font-size="12" '
            f'text-anchor="end">{v:.1f}</text>'
        )
    parts.append(
        f'<text x="{_MARGIN + _PLOT / 2:.1f}" y="{side - 14:.1f}" font-size="13" '
        'text-anchor="middle">false positive rate (1 - specificity)</text>'
    )
    parts.append(
        f'<text x="16" y="{_MARGIN + _PLOT / 2:.1f}" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 16 {_MARGIN + _PLOT / 2:.1f})">'
        "true positive rate (sensitivity)</text>"
    )
    for i, curve in enumerate(curves):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{_sx(fpr):.2f},{_sy(tpr):.2f}" for _, tpr, fpr in curve.points)
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        label = curve.label or f"curve {i + 1}"
        ly = _MARGIN + 18 + 16 * i
        parts.append(
            f'<line x1="{_MARGIN + 12}" y1="{ly - 4:.1f}" x2="{_MARGIN + 36}" '
            f'y2="{ly - 4:.1f}" stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{_MARGIN + 42}" y="{ly:.1f}" font-size="12">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
