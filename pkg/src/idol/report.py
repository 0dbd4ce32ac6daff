"""Loss-curve SVG plots and general-vs-personalized comparison tables."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .metrics import MetricsLog

PANEL_W, PANEL_H, PAD = 360, 220, 40
COLORS = {"train": "#1f77b4", "valid": "#ff7f0e"}


def _panel(title, series, x0, y0):
    """SVG group for one panel; ``series`` is a list of (split, epochs, losses)."""
    xs = [e for _, es, _ in series for e in es]
    ys = [v for _, _, vs in series for v in vs]
    xmin, xmax = min(xs), max(xs)
    ymin, ymax = min(ys), max(ys)
    if xmax == xmin:
        xmax = xmin + 1
    if ymax == ymin:
        ymax = ymin + 1
    iw, ih = PANEL_W - 2 * PAD, PANEL_H - 2 * PAD

    def px(e):
        return x0 + PAD + (e - xmin) / (xmax - xmin) * iw

    def py(v):
        return y0 + PAD + (ymax - v) / (ymax - ymin) * ih

    parts = [
        f'<rect x="{x0 + PAD}" y="{y0 + PAD}" width="{iw}" height="{ih}" fill="none" stroke="#444"/>',
        f'<text x="{x0 + PAD}" y="{y0 + PAD - 8}" font-size="12">{escape(title)}</text>',
        f'<text x="{x0 + PAD}" y="{y0 + PANEL_H - 8}" font-size="10">epoch {xmin}-{xmax}</text>',
        f'<text x="{x0 + 2}" y="{y0 + PAD + 10}" font-size="9">{ymax:.3g}</text>',
        f'<text x="{x0 + 2}" y="{y0 + PAD + ih}" font-size="9">{ymin:.3g}</text>',
    ]
    for split, es, vs in series:
        pts = " ".join(f"{px(e):.2f},{py(v):.2f}" for e, v in zip(es, vs))
        parts.append(f'<polyline fill="none" stroke="{COLORS.get(split, "#000")}" stroke-width="1.5" '
                     f'points="{pts}"><title>{escape(split)}</title></polyline>')
    return "\n".join(parts)


def write_svg(log: MetricsLog, path, stage1_epochs: int | None = None) -> Path:
    """One panel for the general stage, one per personalized patient.

    Patient panels prepend the patient's stage-1 validation curve, so the
    drop at the stage boundary is visible; stage-2 epochs are offset by the
    stage-1 epoch count.
    """
    panels = []
    gen = [(s, [r.epoch for r in log.series("general", s)], log.losses("general", s)) for s in ("train", "valid")]
    gen = [g for g in gen if g[1]]
    if gen:
        panels.append(("general model (cohort)", gen))
    offset = stage1_epochs or max((r.epoch for r in log.records if r.stage == "general"), default=0)
    patients = []
    for r in log.records:
        if r.stage == "idol" and r.patient not in patients:
            patients.append(r.patient)
    for pid in patients:
        series = []
        for split in ("train", "valid"):
            recs = log.series("idol", split, pid)
            es = [r.epoch + offset for r in recs]
            vs = [r.loss for r in recs]
            if split == "valid":
                pre = log.series("general", "valid", pid)
                es = [r.epoch for r in pre] + es
                vs = [r.loss for r in pre] + vs
            if es:
                series.append((split, es, vs))
        panels.append((f"patient {pid} (stage 2 from epoch {offset + 1})", series))
    cols = 2
    rows = max(1, (len(panels) + cols - 1) // cols)
    width, height = cols * PANEL_W, rows * PANEL_H
    body = [_panel(t, s, (i % cols) * PANEL_W, (i // cols) * PANEL_H) for i, (t, s) in enumerate(panels)]
    svg = (f'<?xml version="1.0" encoding="UTF-8"?>\n'
           f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">\n<rect width="100%" height="100%" fill="white"/>\n'
           + "\n".join(body) + "\n</svg>\n")
    path = Path(path)
    path.write_text(svg)
    return path


TABLE_HEADER = ("task", "patient", "general", "idol", "delta", "general_std", "idol_std", "delta_std")


def comparison_table(summaries: list[dict]) -> list[list]:
    """One row per patient, then a mean row per summary carrying sample stds.

    Standard deviations use ddof=1; a single patient gives 0. Patient rows
    leave the std cells as ``None``.
    """
    rows = []
    for s in summaries:
        task = s["task"]
        ps = s["patients"]
        g = np.array([p["general_metric"] for p in ps])
        i = np.array([p["idol_metric"] for p in ps])
        d = i - g
        for p, gv, iv, dv in zip(ps, g, i, d):
            rows.append([task, p["patient"], float(gv), float(iv), float(dv), None, None, None])

        def sd(a):
            return float(np.std(a, ddof=1)) if len(a) > 1 else 0.0

        rows.append([task, "mean", float(g.mean()), float(i.mean()), float(d.mean()), sd(g), sd(i), sd(d)])
    return rows


def table_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_HEADER)
    for r in rows:
        w.writerow(["" if v is None else format(v, ".17g") if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def format_table(rows) -> str:
    """Human-readable table; mean rows print as ``mean ± std``."""
    lines = [f"{'task':<5} {'patient':<8} {'general':>17} {'idol':>17} {'delta':>17}"]
    for r in rows:
        if r[1] == "mean":
            cells = [f"{r[k]:.4f} ± {r[k + 3]:.4f}" for k in (2, 3, 4)]
        else:
            cells = [f"{r[k]:.4f}" for k in (2, 3, 4)]
        lines.append(f"{r[0]:<5} {r[1]:<8} " + " ".join(f"{c:>17}" for c in cells))
    return "\n".join(lines)


def load_summary(path) -> dict:
    return json.loads(Path(path).read_text())
