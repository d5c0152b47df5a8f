"""Dependency-free SVG charts: line chart, heatmap, 2-D path plot."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

HEADER = '<?xml version="1.0" encoding="UTF-8"?>\n'
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2",
           "#7f7f7f", "#bcbd22", "#17becf")

WIDTH, HEIGHT = 640, 420
MARGIN = {"left": 70, "right": 20, "top": 40, "bottom": 55}


def _open(width=WIDTH, height=HEIGHT) -> list:
    return [
        HEADER,
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">\n',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>\n',
    ]


def _text(x, y, s, size=12, anchor="middle", rotate=None) -> str:
    tf = f' transform="rotate({rotate} {x:.2f} {y:.2f})"' if rotate is not None else ""
    return (f'<text x="{x:.2f}" y="{y:.2f}" font-family="sans-serif" font-size="{size}" '
            f'text-anchor="{anchor}"{tf}>{escape(str(s))}</text>\n')


def _scale(lo, hi, a, b):
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    return lambda v: a + (v - lo) * (b - a) / (hi - lo)


def _axes(out, x_lo, x_hi, y_lo, y_hi, title, xlabel, ylabel, width=WIDTH, height=HEIGHT):
    left, right = MARGIN["left"], width - MARGIN["right"]
    top, bottom = MARGIN["top"], height - MARGIN["bottom"]
    sx = _scale(x_lo, x_hi, left, right)
    sy = _scale(y_lo, y_hi, bottom, top)
    out.append(f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>\n')
    out.append(f'<line x1="{left}" y1="{bottom}" x2="{left}" y2="{top}" stroke="black"/>\n')
    for v in np.linspace(x_lo, x_hi, 6):
        out.append(f'<line x1="{sx(v):.2f}" y1="{bottom}" x2="{sx(v):.2f}" y2="{bottom + 4}" stroke="black"/>\n')
        out.append(_text(sx(v), bottom + 18, f"{v:.3g}", size=10))
    for v in np.linspace(y_lo, y_hi, 6):
        out.append(f'<line x1="{left - 4}" y1="{sy(v):.2f}" x2="{left}" y2="{sy(v):.2f}" stroke="black"/>\n')
        out.append(_text(left - 8, sy(v) + 3, f"{v:.3g}", size=10, anchor="end"))
    out.append(_text(width / 2, 24, title, size=14))
    out.append(_text((left + right) / 2, height - 15, xlabel))
    out.append(_text(18, (top + bottom) / 2, ylabel, rotate=-90))
    return sx, sy


def _bounds(values, pad=0.05):
    lo, hi = float(np.min(values)), float(np.max(values))
    span = hi - lo if hi > lo else 1.0
    return lo - pad * span, hi + pad * span


def line_chart(xs, ys, yerr=None, title="", xlabel="", ylabel="") -> str:
    """Single series with optional symmetric error bars."""
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    err = np.zeros_like(ys) if yerr is None else np.asarray(yerr, dtype=float)
    out = _open()
    sx, sy = _axes(out, *_bounds(xs, 0.0), *_bounds(np.concatenate([ys - err, ys + err])),
                   title, xlabel, ylabel)
    for x, y, e in zip(xs, ys, err):
        if e > 0:
            out.append(f'<line x1="{sx(x):.2f}" y1="{sy(y - e):.2f}" x2="{sx(x):.2f}" y2="{sy(y + e):.2f}" '
                       f'stroke="{PALETTE[0]}" stroke-opacity="0.5"/>\n')
    pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
    out.append(f'<polyline points="{pts}" fill="none" stroke="{PALETTE[0]}" stroke-width="2"/>\n')
    for x, y in zip(xs, ys):
        out.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="{PALETTE[0]}"/>\n')
    out.append("</svg>\n")
    return "".join(out)


def heatmap(matrix, title="", xlabel="", ylabel="") -> str:
    """Integer matrix as shaded cells with the count printed in each."""
    m = np.asarray(matrix, dtype=float)
    rows, cols = m.shape
    size = 60
    width = MARGIN["left"] + cols * size + MARGIN["right"] + 20
    height = MARGIN["top"] + rows * size + MARGIN["bottom"]
    out = _open(width, height)
    peak = m.max() if m.max() > 0 else 1.0
    for i in range(rows):
        for j in range(cols):
            x = MARGIN["left"] + j * size
            y = MARGIN["top"] + i * size
            shade = int(round(255 * (1.0 - m[i, j] / peak)))
            out.append(f'<rect x="{x}" y="{y}" width="{size}" height="{size}" '
                       f'fill="rgb({shade},{shade},255)" stroke="black"/>\n')
            out.append(_text(x + size / 2, y + size / 2 + 4, f"{int(m[i, j])}"))
    for j in range(cols):
        out.append(_text(MARGIN["left"] + j * size + size / 2, MARGIN["top"] + rows * size + 16, j, size=11))
    for i in range(rows):
        out.append(_text(MARGIN["left"] - 10, MARGIN["top"] + i * size + size / 2 + 4, i, size=11, anchor="end"))
    out.append(_text(width / 2, 24, title, size=14))
    out.append(_text(MARGIN["left"] + cols * size / 2, height - 12, xlabel))
    out.append(_text(18, MARGIN["top"] + rows * size / 2, ylabel, rotate=-90))
    out.append("</svg>\n")
    return "".join(out)


def path_plot(paths, labels=None, title="", xlabel="x", ylabel="y", markers=None) -> str:
    """Several (N, 2) position sequences on one equal-aspect plot; ``markers`` are extra points."""
    paths = [np.asarray(p, dtype=float).reshape(-1, 2) for p in paths]
    pts = np.concatenate(paths + ([np.asarray(markers, dtype=float).reshape(-1, 2)] if markers is not None else []))
    lo = min(pts[:, 0].min(), pts[:, 1].min())
    hi = max(pts[:, 0].max(), pts[:, 1].max())
    lo, hi = _bounds(np.array([lo, hi]))
    out = _open(HEIGHT + 40, HEIGHT)
    sx, sy = _axes(out, lo, hi, lo, hi, title, xlabel, ylabel, width=HEIGHT + 40)
    for i, p in enumerate(paths):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in p)
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5">'
                   f'<title>{escape(str(labels[i])) if labels else i}</title></polyline>\n')
    if markers is not None:
        for x, y in np.asarray(markers, dtype=float).reshape(-1, 2):
            out.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="5" fill="none" stroke="black"/>\n')
    out.append("</svg>\n")
    return "".join(out)
