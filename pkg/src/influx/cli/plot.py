"""Static SVG line charts for curve CSV files.

The output depends only on the input numbers and options, so it can be
compared byte for byte.
"""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from ..curves import read_table
from ..errors import FormatError

__all__ = ["Series", "load_series", "render_svg", "nice_ticks", "PALETTE"]

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


class Series:
    def __init__(self, name, x, y):
        self.name = name
        self.x = np.asarray(x, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)


def load_series(path) -> tuple[list[Series], str, str]:
    """Series of one CSV: first column is x, each further column a series.

    A two-column file yields one series named after the file stem; wider
    files name series ``stem:column``. Returns ``(series, xlabel, ylabel)``.
    """
    header, data, _ = read_table(path)
    if len(header) < 2:
        raise FormatError("need at least two columns", line=1, path=path)
    if data.shape[0] == 0:
        raise FormatError("no data rows", path=path)
    stem = Path(path).stem
    out = []
    for c in range(1, len(header)):
        name = stem if len(header) == 2 else f"{stem}:{header[c]}"
        ok = ~np.isnan(data[:, 0]) & ~np.isnan(data[:, c])
        out.append(Series(name, data[ok, 0], data[ok, c]))
    ylabel = header[1] if len(header) == 2 else "value"
    return out, header[0], ylabel


def nice_ticks(lo, hi, target=5):
    """Round tick positions covering ``[lo, hi]``."""
    if not hi > lo:
        hi = lo + 1.0
    raw = (hi - lo) / target
    mag = 10 ** math.floor(math.log10(raw))
    for f in (1, 2, 2.5, 5, 10):
        step = f * mag
        if step >= raw:
            break
    first = math.floor(lo / step + 1e-9) * step
    last = math.ceil(hi / step - 1e-9) * step
    n = int(round((last - first) / step))
    return [first + i * step for i in range(n + 1)]


def _fmt(v):
    s = f"{v:.6g}"
    return "0" if s in ("-0", "0") else s


def render_svg(series, xlabel="t", ylabel="sigma", title=None, width=640, height=400) -> str:
    """SVG text with one polyline per series and a legend when there are several."""
    left, right, top, bottom = 64, 20, 36 if title else 16, 48
    pw, ph = width - left - right, height - top - bottom
    xs = np.concatenate([s.x for s in series])
    ys = np.concatenate([s.y for s in series])
    xt = nice_ticks(float(xs.min()), float(xs.max()))
    yt = nice_ticks(float(ys.min()), float(ys.max()))
    x0, x1, y0, y1 = xt[0], xt[-1], yt[0], yt[-1]

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{width / 2:.2f}" y="22" text-anchor="middle" font-size="14">'
                   f'{escape(title)}</text>')
    out.append('<g stroke="#dddddd" stroke-width="1">')
    for v in xt:
        out.append(f'<line x1="{px(v):.2f}" y1="{top}" x2="{px(v):.2f}" y2="{top + ph}"/>')
    for v in yt:
        out.append(f'<line x1="{left}" y1="{py(v):.2f}" x2="{left + pw}" y2="{py(v):.2f}"/>')
    out.append("</g>")
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for v in xt:
        out.append(f'<text x="{px(v):.2f}" y="{top + ph + 16}" text-anchor="middle">{_fmt(v)}</text>')
    for v in yt:
        out.append(f'<text x="{left - 6}" y="{py(v) + 4:.2f}" text-anchor="end">{_fmt(v)}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{height - 10}" text-anchor="middle">'
               f'{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.2f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2:.2f})">{escape(ylabel)}</text>')
    for i, s in enumerate(series):
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(s.x.tolist(), s.y.tolist()))
        out.append(f'<polyline fill="none" stroke="{PALETTE[i % len(PALETTE)]}" '
                   f'stroke-width="1.5" points="{pts}"/>')
    if len(series) > 1:
        lx, ly = left + 10, top + 10
        out.append(f'<g class="legend">')
        for i, s in enumerate(series):
            y = ly + 16 * i
            out.append(f'<line x1="{lx}" y1="{y + 6}" x2="{lx + 20}" y2="{y + 6}" '
                       f'stroke="{PALETTE[i % len(PALETTE)]}" stroke-width="2"/>')
            out.append(f'<text x="{lx + 26}" y="{y + 10}">{escape(s.name)}</text>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
