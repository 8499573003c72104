"""Bare-bones SVG line, scatter and heatmap charts.  CSV stays the authoritative output."""

from __future__ import annotations

import math
from html import escape

W, H = 480, 320
PAD = 48
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"]


def _finite(vals):
    return [v for v in vals if v is not None and math.isfinite(v)]


def _range(vals):
    vals = _finite(vals)
    if not vals:
        return 0.0, 1.0
    lo, hi = min(vals), max(vals)
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


class _Frame:
    def __init__(self, xs, ys, title, xlabel, ylabel):
        self.x0, self.x1 = _range(xs)
        self.y0, self.y1 = _range(ys)
        self.parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
                      f'font-family="sans-serif" font-size="11">',
                      f'<rect width="{W}" height="{H}" fill="white"/>',
                      f'<text x="{W / 2}" y="16" text-anchor="middle" font-size="13">{escape(title)}</text>',
                      f'<text x="{W / 2}" y="{H - 6}" text-anchor="middle">{escape(xlabel)}</text>',
                      f'<text x="12" y="{H / 2}" text-anchor="middle" transform="rotate(-90 12 {H / 2})">'
                      f'{escape(ylabel)}</text>',
                      f'<rect x="{PAD}" y="{PAD / 2}" width="{W - 1.5 * PAD}" height="{H - 1.5 * PAD}" '
                      f'fill="none" stroke="#888"/>']
        for v, anchor, x, y in ((self.x0, "start", PAD, H - PAD + 14), (self.x1, "end", W - PAD / 2, H - PAD + 14)):
            self.parts.append(f'<text x="{x}" y="{y}" text-anchor="{anchor}">{v:.3g}</text>')
        for v, y in ((self.y0, H - PAD), (self.y1, PAD / 2 + 10)):
            self.parts.append(f'<text x="{PAD - 4}" y="{y}" text-anchor="end">{v:.3g}</text>')

    def px(self, x):
        return PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 1.5 * PAD)

    def py(self, y):
        return H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 1.5 * PAD)

    def legend(self, names):
        for i, n in enumerate(names):
            y = PAD / 2 + 14 + 13 * i
            c = PALETTE[i % len(PALETTE)]
            self.parts.append(f'<rect x="{W - PAD / 2 - 110}" y="{y - 8}" width="8" height="8" fill="{c}"/>'
                              f'<text x="{W - PAD / 2 - 98}" y="{y}">{escape(str(n))}</text>')

    def done(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def line_chart(series: dict, title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    """``series``: name -> list of (x, y); missing y values break the line."""
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    f = _Frame(xs, ys, title, xlabel, ylabel)
    for i, pts in enumerate(series.values()):
        c = PALETTE[i % len(PALETTE)]
        run = []
        for x, y in sorted(pts) + [(None, None)]:
            if y is None or x is None or not math.isfinite(y):
                if len(run) > 1:
                    f.parts.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{" ".join(run)}"/>')
                run = []
                continue
            run.append(f"{f.px(x):.1f},{f.py(y):.1f}")
    f.legend(series)
    return f.done()


def scatter_chart(groups: dict, lines: dict | None = None, title: str = "", xlabel: str = "",
                  ylabel: str = "") -> str:
    """``groups``: name -> list of (x, y); ``lines``: name -> (slope, intercept) drawn in the group colour."""
    pts = [p for g in groups.values() for p in g if p[0] is not None and p[1] is not None]
    f = _Frame([p[0] for p in pts], [p[1] for p in pts], title, xlabel, ylabel)
    for i, (name, g) in enumerate(groups.items()):
        c = PALETTE[i % len(PALETTE)]
        for x, y in g:
            if x is not None and y is not None:
                f.parts.append(f'<circle cx="{f.px(x):.1f}" cy="{f.py(y):.1f}" r="3" fill="{c}" fill-opacity="0.7"/>')
        if lines and lines.get(name) is not None:
            a, b = lines[name]
            y0, y1 = a * f.x0 + b, a * f.x1 + b
            f.parts.append(f'<line x1="{f.px(f.x0):.1f}" y1="{f.py(y0):.1f}" x2="{f.px(f.x1):.1f}" '
                           f'y2="{f.py(y1):.1f}" stroke="{c}"/>')
    f.legend(groups)
    return f.done()


def heatmap(rows, cols, values, title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    """``values[i][j]`` for row ``rows[i]`` and column ``cols[j]``; None cells stay grey."""
    flat = _finite(v for r in values for v in r)
    lo, hi = _range(flat)
    f = _Frame([0, len(cols)], [0, len(rows)], title, xlabel, ylabel)
    cw = (W - 1.5 * PAD) / max(len(cols), 1)
    ch = (H - 1.5 * PAD) / max(len(rows), 1)
    for i, r in enumerate(values):
        for j, v in enumerate(r):
            if v is None or not math.isfinite(v):
                fill = "#ddd"
            else:
                t = (v - lo) / (hi - lo)
                fill = f"rgb({int(255 * t)},{int(80 + 60 * (1 - abs(2 * t - 1)))},{int(255 * (1 - t))})"
            f.parts.append(f'<rect x="{PAD + j * cw:.1f}" y="{H - PAD - (i + 1) * ch:.1f}" width="{cw:.1f}" '
                           f'height="{ch:.1f}" fill="{fill}"><title>{rows[i]}, {cols[j]}: {v}</title></rect>')
    f.parts.append(f'<text x="{W - PAD / 2}" y="{PAD / 2 - 4}" text-anchor="end">{lo:.3g} (blue) to {hi:.3g} (red)</text>')
    return f.done()
