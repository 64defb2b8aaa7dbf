"""Minimal deterministic SVG line plots.

Figures are written directly as SVG text with fixed float formatting and
no timestamps, so identical inputs produce identical bytes.  Only what
the pipeline reports need: polylines, shaded bands, axis ticks, legend.
"""

import math
from pathlib import Path

MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 62.0, 16.0, 34.0, 46.0

PALETTE = ["#1f6fb4", "#d95f02", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#555555", "#bcbd22", "#17becf"]


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def nice_ticks(lo: float, hi: float, n: int = 5):
    """Round tick positions covering [lo, hi]."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return [0.0, 1.0]
    if hi <= lo:
        hi = lo + (abs(lo) if lo != 0 else 1.0)
    span = hi - lo
    raw = span / max(n, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-12 * span:
        ticks.append(0.0 if abs(t) < 1e-12 * span else t)
        t += step
    return ticks or [lo, hi]


def _tick_label(v: float) -> str:
    if v == 0:
        return "0"
    a = abs(v)
    if 1e-3 <= a < 1e5:
        s = f"{v:.6g}"
    else:
        s = f"{v:.2e}"
    return s


class Figure:
    """Single-axis line figure with deterministic byte output."""

    def __init__(self, title="", xlabel="", ylabel="",
                 width=640, height=420):
        self.title = title
        self.xlabel = xlabel
        self.ylabel = ylabel
        self.width = float(width)
        self.height = float(height)
        self._lines = []
        self._bands = []
        self._legend = []
        self._xlim = None
        self._ylim = None

    def set_xlim(self, lo, hi):
        self._xlim = (float(lo), float(hi))

    def set_ylim(self, lo, hi):
        self._ylim = (float(lo), float(hi))

    def line(self, x, y, color="#1f6fb4", width=1.5, opacity=1.0,
             dash=None, label=None):
        pts = [(float(a), float(b)) for a, b in zip(x, y)
               if math.isfinite(a) and math.isfinite(b)]
        if not pts:
            return
        self._lines.append((pts, color, width, opacity, dash))
        if label:
            self._legend.append((label, color, dash))

    def band(self, x, lo, hi, color="#1f6fb4", opacity=0.25, label=None):
        pts = [(float(a), float(b), float(c)) for a, b, c in zip(x, lo, hi)
               if math.isfinite(a) and math.isfinite(b) and math.isfinite(c)]
        if not pts:
            return
        self._bands.append((pts, color, opacity))
        if label:
            self._legend.append((label, color, None))

    def _data_range(self):
        xs, ys = [], []
        for pts, *_ in self._lines:
            xs.extend(p[0] for p in pts)
            ys.extend(p[1] for p in pts)
        for pts, *_ in self._bands:
            xs.extend(p[0] for p in pts)
            ys.extend(p[1] for p in pts)
            ys.extend(p[2] for p in pts)
        if not xs:
            xs, ys = [0.0, 1.0], [0.0, 1.0]
        x0, x1 = (min(xs), max(xs)) if self._xlim is None else self._xlim
        y0, y1 = (min(ys), max(ys)) if self._ylim is None else self._ylim
        if x1 <= x0:
            x1 = x0 + 1.0
        if y1 <= y0:
            y1 = y0 + (abs(y0) if y0 != 0 else 1.0)
        if self._ylim is None:
            pad = 0.05 * (y1 - y0)
            y0, y1 = y0 - pad, y1 + pad
        return x0, x1, y0, y1

    def render(self) -> str:
        x0, x1, y0, y1 = self._data_range()
        pw = self.width - MARGIN_L - MARGIN_R
        ph = self.height - MARGIN_T - MARGIN_B

        def sx(v):
            return MARGIN_L + (v - x0) / (x1 - x0) * pw

        def sy(v):
            return MARGIN_T + (1.0 - (v - y0) / (y1 - y0)) * ph

        out = []
        out.append(
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{int(self.width)}" '
            f'height="{int(self.height)}" viewBox="0 0 {int(self.width)} {int(self.height)}">')
        out.append(f'<rect width="{int(self.width)}" height="{int(self.height)}" fill="#ffffff"/>')
        # axes frame
        out.append(f'<rect x="{_fmt(MARGIN_L)}" y="{_fmt(MARGIN_T)}" width="{_fmt(pw)}" '
                   f'height="{_fmt(ph)}" fill="none" stroke="#333333" stroke-width="1"/>')
        # ticks + grid
        for t in nice_ticks(x0, x1):
            if t < x0 - 1e-12 or t > x1 + 1e-12:
                continue
            px = sx(t)
            out.append(f'<line x1="{_fmt(px)}" y1="{_fmt(MARGIN_T)}" x2="{_fmt(px)}" '
                       f'y2="{_fmt(MARGIN_T + ph)}" stroke="#dddddd" stroke-width="0.7"/>')
            out.append(f'<text x="{_fmt(px)}" y="{_fmt(MARGIN_T + ph + 16)}" font-size="11" '
                       f'text-anchor="middle" fill="#333333">{_tick_label(t)}</text>')
        for t in nice_ticks(y0, y1):
            if t < y0 - 1e-12 or t > y1 + 1e-12:
                continue
            py = sy(t)
            out.append(f'<line x1="{_fmt(MARGIN_L)}" y1="{_fmt(py)}" x2="{_fmt(MARGIN_L + pw)}" '
                       f'y2="{_fmt(py)}" stroke="#dddddd" stroke-width="0.7"/>')
            out.append(f'<text x="{_fmt(MARGIN_L - 6)}" y="{_fmt(py + 4)}" font-size="11" '
                       f'text-anchor="end" fill="#333333">{_tick_label(t)}</text>')
        # bands under lines
        for pts, color, opacity in self._bands:
            fwd = " ".join(f"{_fmt(sx(p[0]))},{_fmt(sy(p[1]))}" for p in pts)
            bwd = " ".join(f"{_fmt(sx(p[0]))},{_fmt(sy(p[2]))}" for p in reversed(pts))
            out.append(f'<polygon points="{fwd} {bwd}" fill="{color}" '
                       f'fill-opacity="{opacity:.3f}" stroke="none"/>')
        for pts, color, width, opacity, dash in self._lines:
            coords = " ".join(f"{_fmt(sx(p[0]))},{_fmt(sy(p[1]))}" for p in pts)
            dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
            out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                       f'stroke-width="{width}" stroke-opacity="{opacity:.3f}"{dash_attr}/>')
        # labels
        if self.title:
            out.append(f'<text x="{_fmt(self.width / 2)}" y="20" font-size="14" '
                       f'text-anchor="middle" fill="#111111">{self.title}</text>')
        if self.xlabel:
            out.append(f'<text x="{_fmt(MARGIN_L + pw / 2)}" y="{_fmt(self.height - 12)}" '
                       f'font-size="12" text-anchor="middle" fill="#111111">{self.xlabel}</text>')
        if self.ylabel:
            cx, cy = 16.0, MARGIN_T + ph / 2
            out.append(f'<text x="{_fmt(cx)}" y="{_fmt(cy)}" font-size="12" text-anchor="middle" '
                       f'fill="#111111" transform="rotate(-90 {_fmt(cx)} {_fmt(cy)})">{self.ylabel}</text>')
        for i, (label, color, dash) in enumerate(self._legend[:10]):
            ly = MARGIN_T + 14 + 15 * i
            lx = MARGIN_L + pw - 150
            dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
            out.append(f'<line x1="{_fmt(lx)}" y1="{_fmt(ly - 4)}" x2="{_fmt(lx + 22)}" '
                       f'y2="{_fmt(ly - 4)}" stroke="{color}" stroke-width="2"{dash_attr}/>')
            out.append(f'<text x="{_fmt(lx + 28)}" y="{_fmt(ly)}" font-size="11" '
                       f'fill="#111111">{label}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.render())
