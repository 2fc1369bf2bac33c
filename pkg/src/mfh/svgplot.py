"""Self-contained SVG line plots (no plotting dependency).

Fixed 800x600 viewBox with axes, tick labels, one or more series drawn as a
polyline plus point markers, and an optional fitted-line overlay.  Output is a
pure function of the inputs.
"""

from __future__ import annotations

import math

WIDTH, HEIGHT = 800, 600
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 80, 30, 50, 60
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


class _Scale:
    def __init__(self, lo, hi, pix_lo, pix_hi, log: bool):
        if log:
            lo, hi = math.log10(lo), math.log10(hi)
        if hi <= lo:
            hi = lo + 1.0
        self.lo, self.hi, self.pix_lo, self.pix_hi, self.log = lo, hi, pix_lo, pix_hi, log

    def __call__(self, v: float) -> float:
        t = math.log10(v) if self.log else v
        frac = (t - self.lo) / (self.hi - self.lo)
        return self.pix_lo + frac * (self.pix_hi - self.pix_lo)


def line_plot(series: list[tuple[str, list[float], list[float]]], title: str,
              xlabel: str, ylabel: str, logx: bool = False, logy: bool = False,
              fit_line: tuple[float, float] | None = None,
              annotation: str | None = None) -> str:
    """Render series [(label, xs, ys), ...] to an SVG document string.

    ``fit_line`` is (slope, intercept) in the plotted coordinates (log10 when
    the corresponding axis is logarithmic).  Non-positive values are dropped
    from log axes; if nothing survives, the plot degrades to the annotation.
    """
    pts = []
    for _, xs, ys in series:
        for x, y in zip(xs, ys):
            if (not logx or x > 0) and (not logy or y > 0) and math.isfinite(x) and math.isfinite(y):
                pts.append((x, y))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" '
        f'width="{WIDTH}" height="{HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH/2}" y="25" text-anchor="middle" font-size="18">{title}</text>',
    ]
    if not pts:
        note = annotation or "no plottable data"
        parts.append(f'<text x="{WIDTH/2}" y="{HEIGHT/2}" text-anchor="middle" '
                     f'font-size="16" fill="#b00">{note}</text></svg>')
        return "\n".join(parts)

    xs_all = [p[0] for p in pts]
    ys_all = [p[1] for p in pts]
    sx = _Scale(min(xs_all), max(xs_all), MARGIN_L, WIDTH - MARGIN_R, logx)
    sy = _Scale(min(ys_all), max(ys_all), HEIGHT - MARGIN_B, MARGIN_T, logy)

    # axes
    parts.append(f'<line x1="{MARGIN_L}" y1="{HEIGHT-MARGIN_B}" x2="{WIDTH-MARGIN_R}" '
                 f'y2="{HEIGHT-MARGIN_B}" stroke="black"/>')
    parts.append(f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" '
                 f'y2="{HEIGHT-MARGIN_B}" stroke="black"/>')
    for t in _ticks(sx.lo, sx.hi):
        px = MARGIN_L + (t - sx.lo) / (sx.hi - sx.lo) * (WIDTH - MARGIN_L - MARGIN_R)
        label = _fmt(10**t) if logx else _fmt(t)
        parts.append(f'<line x1="{px:.1f}" y1="{HEIGHT-MARGIN_B}" x2="{px:.1f}" '
                     f'y2="{HEIGHT-MARGIN_B+5}" stroke="black"/>')
        parts.append(f'<text x="{px:.1f}" y="{HEIGHT-MARGIN_B+20}" text-anchor="middle" '
                     f'font-size="12">{label}</text>')
    for t in _ticks(sy.lo, sy.hi):
        py = (HEIGHT - MARGIN_B) + (t - sy.lo) / (sy.hi - sy.lo) * (MARGIN_T - HEIGHT + MARGIN_B)
        label = _fmt(10**t) if logy else _fmt(t)
        parts.append(f'<line x1="{MARGIN_L-5}" y1="{py:.1f}" x2="{MARGIN_L}" '
                     f'y2="{py:.1f}" stroke="black"/>')
        parts.append(f'<text x="{MARGIN_L-8}" y="{py+4:.1f}" text-anchor="end" '
                     f'font-size="12">{label}</text>')
    parts.append(f'<text x="{WIDTH/2}" y="{HEIGHT-15}" text-anchor="middle" '
                 f'font-size="14">{xlabel}</text>')
    parts.append(f'<text x="20" y="{HEIGHT/2}" text-anchor="middle" font-size="14" '
                 f'transform="rotate(-90 20 {HEIGHT/2})">{ylabel}</text>')

    for idx, (label, xs, ys) in enumerate(series):
        color = COLORS[idx % len(COLORS)]
        coords = [(sx(x), sy(y)) for x, y in zip(xs, ys)
                  if (not logx or x > 0) and (not logy or y > 0)
                  and math.isfinite(x) and math.isfinite(y)]
        if len(coords) > 1:
            path = " ".join(f"{px:.2f},{py:.2f}" for px, py in coords)
            parts.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for px, py in coords:
            parts.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="3.5" fill="{color}"/>')
        parts.append(f'<text x="{WIDTH-MARGIN_R-5}" y="{MARGIN_T+18*idx+15}" text-anchor="end" '
                     f'font-size="13" fill="{color}">{label}</text>')

    if fit_line is not None:
        slope, intercept = fit_line
        y0 = slope * sx.lo + intercept
        y1 = slope * sx.hi + intercept
        p0 = (MARGIN_L, (HEIGHT - MARGIN_B) + (y0 - sy.lo) / (sy.hi - sy.lo) * (MARGIN_T - HEIGHT + MARGIN_B))
        p1 = (WIDTH - MARGIN_R, (HEIGHT - MARGIN_B) + (y1 - sy.lo) / (sy.hi - sy.lo) * (MARGIN_T - HEIGHT + MARGIN_B))
        parts.append(f'<line x1="{p0[0]:.1f}" y1="{p0[1]:.1f}" x2="{p1[0]:.1f}" y2="{p1[1]:.1f}" '
                     f'stroke="#555" stroke-dasharray="6,4" stroke-width="1.5"/>')
        parts.append(f'<text x="{WIDTH-MARGIN_R-5}" y="{HEIGHT-MARGIN_B-10}" text-anchor="end" '
                     f'font-size="13" fill="#555">fit slope {_fmt(slope)}</text>')

    if annotation:
        parts.append(f'<text x="{MARGIN_L+10}" y="{MARGIN_T+15}" font-size="13" '
                     f'fill="#b00">{annotation}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
