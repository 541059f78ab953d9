"""Tiny SVG line-plot writer: lines, shaded bands, dots and horizontal reference lines."""

from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
PANEL_W, PANEL_H = 360, 280
MARGIN = dict(left=58, right=12, top=30, bottom=42)


@dataclass
class Panel:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    logy: bool = False
    lines: list = field(default_factory=list)
    bands: list = field(default_factory=list)
    dots: list = field(default_factory=list)
    hlines: list = field(default_factory=list)

    def line(self, x, y, label="", color=None, dashed=False):
        self.lines.append((np.asarray(x, float), np.asarray(y, float), label, color, dashed))
        return self

    def band(self, x, lo, hi, color=None):
        self.bands.append((np.asarray(x, float), np.asarray(lo, float), np.asarray(hi, float), color))
        return self

    def scatter(self, x, y, color=None, r=1.6):
        self.dots.append((np.asarray(x, float), np.asarray(y, float), color, r))
        return self

    def hline(self, y, label="", dashed=True):
        self.hlines.append((float(y), label, dashed))
        return self


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = np.ceil(lo / step) * step
    return [round(v, 10) for v in np.arange(start, hi + step * 1e-9, step)]


def _fmt_tick(v):
    return f"{v:.3g}"


def _render_panel(p, ox, oy):
    out = []
    xs_all = [a for s in p.lines for a in s[0]] + [a for s in p.dots for a in s[0]] + [a for s in p.bands for a in s[0]]
    ys_all = [a for s in p.lines for a in s[1]] + [a for s in p.dots for a in s[1]]
    ys_all += [a for s in p.bands for a in np.concatenate([s[1], s[2]])] + [h[0] for h in p.hlines]
    xs_all = np.array([v for v in xs_all if np.isfinite(v)])
    ys_all = np.array([v for v in ys_all if np.isfinite(v) and (not p.logy or v > 0)])
    if xs_all.size == 0 or ys_all.size == 0:
        return out
    ty = (lambda v: np.log10(v)) if p.logy else (lambda v: v)
    x0, x1 = xs_all.min(), xs_all.max()
    y0, y1 = ty(ys_all.min()), ty(ys_all.max())
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    w = PANEL_W - MARGIN["left"] - MARGIN["right"]
    h = PANEL_H - MARGIN["top"] - MARGIN["bottom"]
    left, top = ox + MARGIN["left"], oy + MARGIN["top"]

    def sx(v):
        return left + (v - x0) / (x1 - x0) * w

    def sy(v):
        return top + h - (ty(v) - y0) / (y1 - y0) * h

    def path(xa, ya):
        pts, segs = [], []
        for a, b in zip(xa, ya):
            if np.isfinite(a) and np.isfinite(b) and (not p.logy or b > 0):
                pts.append(f"{sx(a):.2f},{sy(b):.2f}")
            elif pts:
                segs.append(pts)
                pts = []
        if pts:
            segs.append(pts)
        return segs

    out.append(f'<rect x="{left}" y="{top}" width="{w}" height="{h}" fill="none" stroke="#444"/>')
    for v in _ticks(x0, x1):
        out.append(f'<text x="{sx(v):.1f}" y="{top + h + 14}" font-size="10" text-anchor="middle">{_fmt_tick(v)}</text>')
    for v in _ticks(y0, y1):
        label = _fmt_tick(10**v) if p.logy else _fmt_tick(v)
        yy = top + h - (v - y0) / (y1 - y0) * h
        out.append(f'<text x="{left - 4}" y="{yy + 3:.1f}" font-size="10" text-anchor="end">{label}</text>')
    out.append(f'<text x="{left + w / 2}" y="{oy + 18}" font-size="12" text-anchor="middle">{escape(p.title)}</text>')
    out.append(f'<text x="{left + w / 2}" y="{top + h + 32}" font-size="11" text-anchor="middle">{escape(p.xlabel)}</text>')
    out.append(
        f'<text x="{ox + 14}" y="{top + h / 2}" font-size="11" text-anchor="middle" '
        f'transform="rotate(-90 {ox + 14} {top + h / 2})">{escape(p.ylabel)}</text>'
    )
    for i, (bx, lo, hi, color) in enumerate(p.bands):
        color = color or PALETTE[i % len(PALETTE)]
        upper = path(bx, hi)
        lower = path(bx[::-1], lo[::-1])
        if upper and lower:
            pts = " ".join(upper[0] + lower[0])
            out.append(f'<polygon points="{pts}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
    legend = []
    for i, (lx, ly, label, color, dashed) in enumerate(p.lines):
        color = color or PALETTE[i % len(PALETTE)]
        dash = ' stroke-dasharray="5,3"' if dashed else ""
        for seg in path(lx, ly):
            out.append(f'<polyline points="{" ".join(seg)}" fill="none" stroke="{color}" stroke-width="1.4"{dash}/>')
        if label:
            legend.append((label, color))
    for i, (dx, dy, color, r) in enumerate(p.dots):
        color = color or PALETTE[i % len(PALETTE)]
        for a, b in zip(dx, dy):
            if np.isfinite(a) and np.isfinite(b) and (not p.logy or b > 0):
                out.append(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="{r}" fill="{color}"/>')
    for yv, label, dashed in p.hlines:
        if p.logy and yv <= 0:
            continue
        dash = ' stroke-dasharray="6,4"' if dashed else ""
        out.append(f'<line x1="{left}" x2="{left + w}" y1="{sy(yv):.2f}" y2="{sy(yv):.2f}" stroke="#000"{dash}/>')
        if label:
            legend.append((label, "#000"))
    for k, (label, color) in enumerate(legend):
        yy = top + 12 + 13 * k
        out.append(f'<line x1="{left + 6}" x2="{left + 22}" y1="{yy - 3}" y2="{yy - 3}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + 26}" y="{yy}" font-size="10">{escape(label)}</text>')
    return out


def render(panels, path=None):
    """Lay panels out in one row; returns the SVG text and writes it if ``path`` is given."""
    width = PANEL_W * len(panels)
    body = []
    for i, p in enumerate(panels):
        body += _render_panel(p, i * PANEL_W, 0)
    text = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PANEL_H}" '
        f'viewBox="0 0 {width} {PANEL_H}" font-family="sans-serif">\n'
        f'<rect width="100%" height="100%" fill="white"/>\n' + "\n".join(body) + "\n</svg>\n"
    )
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
