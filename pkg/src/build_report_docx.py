# -*- coding: utf-8 -*-
"""
Build a Word document from one or more metrics reports (out/metrics*.json).

Formatting choices:
- Title: large, bold, teal; run line (variant, seeds, config hash) in grey
- One section per report: aggregate table, then per-object table
- Metric cells show "mean ± std"; empty posture cells show "n/a"
- Optional sweep table (mass x scale success grid) from out/sweep.csv

Usage:
    python -m src.build_report_docx out/metrics.json [out/sweep.csv]
"""
from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import pandas as pd
from docx import Document
from docx.oxml import OxmlElement
from docx.oxml.ns import qn
from docx.shared import Inches, Pt, RGBColor

from .utils import log

# ── Colours ──────────────────────────────────────────────────────────────────
TEAL      = RGBColor(0x1B, 0x7A, 0x6B)
DARK_GREY = RGBColor(0x2C, 0x2C, 0x2C)
MID_GREY  = RGBColor(0x55, 0x55, 0x55)

METRIC_LABELS = (("success", "Success %"), ("stability", "Stability %"),
                 ("functionality", "Functionality %"), ("posture", "Posture"))


# ── Helpers ──────────────────────────────────────────────────────────────────

def _set_font(run, size_pt, bold=False, italic=False, color=None, underline=False):
    run.font.name = "Calibri"
    run.font.size = Pt(size_pt)
    run.font.bold = bold
    run.font.italic = italic
    run.font.underline = underline
    if color:
        run.font.color.rgb = color


def _add_paragraph(doc, space_before=0, space_after=6):
    p = doc.add_paragraph()
    p.paragraph_format.space_before = Pt(space_before)
    p.paragraph_format.space_after = Pt(space_after)
    return p


def _add_horizontal_rule(doc, color_hex="1B7A6B", thickness=12):
    """Coloured bottom border on an empty paragraph."""
    p = _add_paragraph(doc, space_before=2, space_after=2)
    pPr = p._p.get_or_add_pPr()
    pBdr = OxmlElement("w:pBdr")
    bottom = OxmlElement("w:bottom")
    bottom.set(qn("w:val"), "single")
    bottom.set(qn("w:sz"), str(thickness))
    bottom.set(qn("w:space"), "1")
    bottom.set(qn("w:color"), color_hex)
    pBdr.append(bottom)
    pPr.append(pBdr)
    return p


def fmt_stat(stat: Optional[dict]) -> str:
    if not stat or stat.get("mean") is None:
        return "n/a"
    return f"{stat['mean']:.1f} ± {stat['std']:.1f}"


def _table(doc, header: Sequence[str], rows: Sequence[Sequence[str]]):
    t = doc.add_table(rows=1, cols=len(header))
    t.style = "Light Grid Accent 1"
    for cell, text in zip(t.rows[0].cells, header):
        cell.text = ""
        _set_font(cell.paragraphs[0].add_run(text), 10, bold=True, color=DARK_GREY)
    for row in rows:
        cells = t.add_row().cells
        for cell, text in zip(cells, row):
            cell.text = ""
            _set_font(cell.paragraphs[0].add_run(str(text)), 10, color=DARK_GREY)
    return t


# ── Section builders ─────────────────────────────────────────────────────────

def add_section_heading(doc, title):
    _add_paragraph(doc, space_before=14, space_after=0)
    p = _add_paragraph(doc, space_before=0, space_after=4)
    _set_font(p.add_run(title.upper()), 13, bold=True, color=TEAL, underline=True)
    _add_horizontal_rule(doc, thickness=8)


def add_report(doc, report: dict):
    add_section_heading(doc, f"Reward variant: {report.get('variant') or 'n/a'}")
    p = _add_paragraph(doc, space_after=6)
    line = (f"Seeds {report.get('seeds')}  |  {report.get('episodes_per_object')} episodes per object  |  "
            f"config {str(report.get('config_hash', ''))[:12]}")
    _set_font(p.add_run(line), 10, italic=True, color=MID_GREY)

    agg = report.get("aggregate", {})
    _table(doc, ["", *[lbl for _, lbl in METRIC_LABELS]],
           [["All objects", *[fmt_stat(agg.get(k)) for k, _ in METRIC_LABELS]]])

    per_object = report.get("per_object", {})
    if per_object:
        _add_paragraph(doc, space_before=6, space_after=2)
        _table(doc, ["Object", *[lbl for _, lbl in METRIC_LABELS]],
               [[cls, *[fmt_stat(m.get(k)) for k, _ in METRIC_LABELS]] for cls, m in sorted(per_object.items())])


def add_sweep(doc, sweep: pd.DataFrame):
    add_section_heading(doc, "Mass / scale sweep (success %)")
    grid = sweep.pivot_table(index="mass", columns="scale", values="success_mean", aggfunc="mean")
    rows = [[f"{m:.2f} kg", *[f"{grid.loc[m, s]:.1f}" for s in grid.columns]] for m in grid.index]
    _table(doc, ["Mass \\ scale", *[f"{s:.2f}x" for s in grid.columns]], rows)


# ── Main ─────────────────────────────────────────────────────────────────────

def build_docx(reports: Sequence[dict], out_path: Path, sweep: Optional[pd.DataFrame] = None,
               title: str = "Grasp evaluation") -> Path:
    doc = Document()
    for section in doc.sections:
        section.top_margin = Inches(1.0)
        section.bottom_margin = Inches(1.0)
        section.left_margin = Inches(1.0)
        section.right_margin = Inches(1.0)

    style = doc.styles["Normal"]
    style.font.name = "Calibri"
    style.font.size = Pt(11)
    style.font.color.rgb = DARK_GREY

    p = _add_paragraph(doc, space_after=6)
    _set_font(p.add_run(title), 22, bold=True, color=TEAL)
    _add_horizontal_rule(doc, thickness=18)

    for rep in reports:
        add_report(doc, rep)
    if sweep is not None and not sweep.empty:
        add_sweep(doc, sweep)

    _add_paragraph(doc, space_before=16, space_after=0)
    _add_horizontal_rule(doc, color_hex="AAAAAA", thickness=6)
    p = _add_paragraph(doc, space_before=4, space_after=0)
    _set_font(p.add_run("Metrics on a 0-100 scale; stability and functionality count successful episodes only."),
              9, italic=True, color=MID_GREY)

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    doc.save(out_path)
    log("report", f"saved {out_path}")
    return out_path


if __name__ == "__main__":
    json_in = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("out/metrics.json")
    sweep_df = pd.read_csv(sys.argv[2]) if len(sys.argv) > 2 else None
    data = json.loads(json_in.read_text(encoding="utf-8"))
    reps = data if isinstance(data, list) else [data]
    build_docx(reps, json_in.with_suffix(".docx"), sweep_df)
