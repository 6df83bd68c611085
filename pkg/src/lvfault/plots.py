"""Self-contained SVG line and bar charts. Output depends only on the data, so
re-running an experiment reproduces identical files."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

W, H = 640, 360
ML, MR, MT, MB = 60, 20, 40, 50
PALETTE = ("#c0392b", "#2471a3", "#229954", "#7d3c98", "#d68910")


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _frame(title: str, body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{escape(title)}</text>',
    )
    return "\n".join([*head, *body, "</svg>"]) + "\n"


def _axes(ymin, ymax, xlabel, ylabel):
    x0, x1, y0, y1 = ML, W - MR, H - MB, MT
    out = [
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<text x="{(x0 + x1) / 2}" y="{H - 10}" text-anchor="middle" font-family="sans-serif" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{(y0 + y1) / 2}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 14 {(y0 + y1) / 2})">{escape(ylabel)}</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        val = ymin + frac * (ymax - ymin)
        y = y0 - frac * (y0 - y1)
        out.append(
            f'<text x="{x0 - 6}" y="{_fmt(y + 4)}" text-anchor="end" font-family="sans-serif" font-size="10">{val:.3g}</text>'
        )
    return out


def line_plot_svg(series: dict, title: str = "", xlabel: str = "step", ylabel: str = "value") -> str:
    """One polyline per named series."""
    arrays = {k: np.asarray(v, dtype=float) for k, v in series.items()}
    allv = np.concatenate([a for a in arrays.values() if a.size]) if arrays else np.zeros(1)
    ymin, ymax = float(allv.min()), float(allv.max())
    if ymax - ymin < 1e-12:
        ymin, ymax = ymin - 0.5, ymax + 0.5
    n = max((a.size for a in arrays.values()), default=1)
    body = _axes(ymin, ymax, xlabel, ylabel)
    for i, (name, a) in enumerate(arrays.items()):
        xs = ML + (W - ML - MR) * np.arange(a.size) / max(n - 1, 1)
        ys = (H - MB) - (H - MB - MT) * (a - ymin) / (ymax - ymin)
        pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in zip(xs, ys))
        color = PALETTE[i % len(PALETTE)]
        body.append(f'<polyline fill="none" stroke="{color}" stroke-width="1" points="{pts}"/>')
        body.append(
            f'<text x="{W - MR - 4}" y="{MT + 14 * (i + 1)}" text-anchor="end" fill="{color}" '
            f'font-family="sans-serif" font-size="11">{escape(str(name))}</text>'
        )
    return _frame(title, body)


def bar_chart_svg(labels, values, title: str = "", xlabel: str = "", ylabel: str = "score") -> str:
    values = [float(v) for v in values]
    ymax = max([1.0, *values])
    body = _axes(0.0, ymax, xlabel, ylabel)
    n = max(len(values), 1)
    slot = (W - ML - MR) / n
    for i, (lab, v) in enumerate(zip(labels, values)):
        h = (H - MB - MT) * v / ymax
        x = ML + i * slot + 0.15 * slot
        body.append(
            f'<rect class="bar" x="{_fmt(x)}" y="{_fmt(H - MB - h)}" width="{_fmt(0.7 * slot)}" '
            f'height="{_fmt(h)}" fill="{PALETTE[1]}"/>'
        )
        body.append(
            f'<text x="{_fmt(x + 0.35 * slot)}" y="{H - MB + 14}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="10">{escape(str(lab))}</text>'
        )
    return _frame(title, body)


def write_svg(text: str, path) -> Path:
    path = Path(path)
    path.write_text(text)
    return path
