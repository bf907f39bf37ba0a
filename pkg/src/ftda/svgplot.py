"""Minimal self-contained SVG line plots with error bands.

Only what the report command needs: several labelled series over a shared
x axis, each optionally with a shaded band. Output is deterministic text.
"""

from __future__ import annotations

import numpy as np

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#17becf", "#7f7f7f", "#bcbd22", "#e377c2"]

WIDTH, HEIGHT = 720, 440
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 64, 160, 36, 48


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".") if abs(v) < 1e4 else f"{v:.2e}"


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / (count - 1) for i in range(count)]


def line_plot_svg(series: list[dict], title: str, xlabel: str,
                  ylabel: str) -> str:
    """Render series [{label, x, y, band: (lo, hi) | None}] to SVG text."""
    xs = np.concatenate([np.asarray(s["x"], dtype=np.float64) for s in series])
    ys = []
    for s in series:
        ys.append(np.asarray(s["y"], dtype=np.float64))
        if s.get("band") is not None:
            ys.extend(np.asarray(b, dtype=np.float64) for b in s["band"])
    yall = np.concatenate(ys)
    yall = yall[np.isfinite(yall)]
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = (float(yall.min()), float(yall.max())) if yall.size else (0, 1)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    pad = 0.05 * (y_hi - y_lo) or 0.5
    y_lo, y_hi = y_lo - pad, y_hi + pad

    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B

    def px(x):
        return MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y):
        return MARGIN_T + (y_hi - y) / (y_hi - y_lo) * plot_h

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
        f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{MARGIN_L + plot_w / 2:.1f}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
    ]
    # Axes, ticks, grid.
    out.append(f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{plot_w}" '
               f'height="{plot_h}" fill="none" stroke="#333"/>')
    for t in _ticks(x_lo, x_hi):
        out.append(f'<line x1="{px(t):.1f}" y1="{MARGIN_T + plot_h}" '
                   f'x2="{px(t):.1f}" y2="{MARGIN_T + plot_h + 4}" '
                   f'stroke="#333"/>')
        out.append(f'<text x="{px(t):.1f}" y="{MARGIN_T + plot_h + 18}" '
                   f'text-anchor="middle" font-family="sans-serif" '
                   f'font-size="11">{_fmt(t)}</text>')
    for t in _ticks(y_lo, y_hi):
        out.append(f'<line x1="{MARGIN_L}" y1="{py(t):.1f}" '
                   f'x2="{MARGIN_L + plot_w}" y2="{py(t):.1f}" '
                   f'stroke="#ddd"/>')
        out.append(f'<text x="{MARGIN_L - 6}" y="{py(t) + 4:.1f}" '
                   f'text-anchor="end" font-family="sans-serif" '
                   f'font-size="11">{_fmt(t)}</text>')
    out.append(f'<text x="{MARGIN_L + plot_w / 2:.1f}" y="{HEIGHT - 10}" '
               f'text-anchor="middle" font-family="sans-serif" '
               f'font-size="12">{xlabel}</text>')
    out.append(f'<text x="16" y="{MARGIN_T + plot_h / 2:.1f}" '
               f'text-anchor="middle" font-family="sans-serif" font-size="12" '
               f'transform="rotate(-90 16 {MARGIN_T + plot_h / 2:.1f})">'
               f'{ylabel}</text>')

    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        x = np.asarray(s["x"], dtype=np.float64)
        y = np.asarray(s["y"], dtype=np.float64)
        ok = np.isfinite(y)
        if s.get("band") is not None:
            lo = np.asarray(s["band"][0], dtype=np.float64)
            hi = np.asarray(s["band"][1], dtype=np.float64)
            bok = ok & np.isfinite(lo) & np.isfinite(hi)
            if bok.any():
                fwd = [f"{px(a):.1f},{py(b):.1f}"
                       for a, b in zip(x[bok], hi[bok])]
                back = [f"{px(a):.1f},{py(b):.1f}"
                        for a, b in zip(x[bok][::-1], lo[bok][::-1])]
                out.append(f'<polygon points="{" ".join(fwd + back)}" '
                           f'fill="{color}" fill-opacity="0.15" '
                           f'stroke="none"/>')
        pts = " ".join(f"{px(a):.1f},{py(b):.1f}"
                       for a, b in zip(x[ok], y[ok]))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                   f'stroke-width="1.8"/>')
        ly = MARGIN_T + 14 + 16 * i
        lx = MARGIN_L + plot_w + 12
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" '
                   f'y2="{ly - 4}" stroke="{color}" stroke-width="1.8"/>')
        out.append(f'<text x="{lx + 24}" y="{ly}" font-family="sans-serif" '
                   f'font-size="11">{s["label"]}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
