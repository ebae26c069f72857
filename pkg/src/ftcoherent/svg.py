"""Dependency-free SVG output: per-box heatmaps and simple line charts."""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

_DIVERGING = [(0.0, (33, 102, 172)), (0.5, (247, 247, 247)), (1.0, (178, 24, 43))]
_SEQUENTIAL = [(0.0, (68, 1, 84)), (0.25, (59, 82, 139)), (0.5, (33, 145, 140)), (0.75, (94, 201, 98)),
               (1.0, (253, 231, 37))]
_LABELS = {1: (214, 39, 40), 2: (31, 119, 180)}
_SERIES = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _colors(t, stops) -> list[str]:
    t = np.clip(np.nan_to_num(t, nan=0.5), 0.0, 1.0)
    xs = [s[0] for s in stops]
    rgb = [np.interp(t, xs, [s[1][c] for s in stops]) for c in range(3)]
    return ["#%02x%02x%02x" % tuple(int(round(v)) for v in px) for px in zip(*rgb)]


def heatmap(path, origins, wx: float, wy: float, values, *, title: str = "", diverging: bool = False,
            labels: bool = False, width: int = 900) -> None:
    """One filled rectangle per box, y axis pointing up."""
    origins = np.asarray(origins, dtype=float)
    values = np.asarray(values)
    x0, y0 = origins.min(axis=0)
    x1, y1 = origins.max(axis=0) + np.array([wx, wy])
    scale = width / (x1 - x0)
    height = int(np.ceil((y1 - y0) * scale))
    top = 30 if title else 0
    if labels:
        cols = ["#%02x%02x%02x" % _LABELS.get(int(v), (128, 128, 128)) for v in values]
    elif diverging:
        m = float(np.max(np.abs(values))) or 1.0
        cols = _colors(0.5 + 0.5 * values / m, _DIVERGING)
    else:
        lo, hi = float(np.min(values)), float(np.max(values))
        cols = _colors((values - lo) / ((hi - lo) or 1.0), _SEQUENTIAL)
    px = (origins[:, 0] - x0) * scale
    py = top + (y1 - origins[:, 1] - wy) * scale
    w = wx * scale
    h = wy * scale
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height + top}" '
             f'shape-rendering="crispEdges">\n']
    if title:
        parts.append(f'<text x="5" y="20" font-family="sans-serif" font-size="14">{escape(title)}</text>\n')
    parts.extend(f'<rect x="{a:.2f}" y="{b:.2f}" width="{w:.3f}" height="{h:.3f}" fill="{c}"/>\n'
                 for a, b, c in zip(px, py, cols))
    parts.append("</svg>\n")
    Path(path).write_text("".join(parts))


def line_chart(path, series: dict[str, tuple], *, title: str = "", xlabel: str = "", ylabel: str = "",
               loglog: bool = False, width: int = 640, height: int = 420) -> None:
    """``series`` maps a legend label to ``(x, y)`` arrays."""
    ml, mr, mt, mb = 70, 20, 40, 50
    tf = np.log10 if loglog else (lambda a: np.asarray(a, dtype=float))
    xs = [tf(np.asarray(x, dtype=float)) for x, _ in series.values()]
    ys = [tf(np.asarray(y, dtype=float)) for _, y in series.values()]
    allx = np.concatenate(xs) if xs else np.array([0.0, 1.0])
    ally = np.concatenate(ys) if ys else np.array([0.0, 1.0])
    fin = np.isfinite(allx) & np.isfinite(ally)
    allx, ally = (allx[fin], ally[fin]) if fin.any() else (np.array([0.0, 1.0]), np.array([0.0, 1.0]))
    xlo, xhi = allx.min(), allx.max()
    ylo, yhi = ally.min(), ally.max()
    xhi = xhi if xhi > xlo else xlo + 1.0
    yhi = yhi if yhi > ylo else ylo + 1.0

    def X(v):
        return ml + (v - xlo) / (xhi - xlo) * (width - ml - mr)

    def Y(v):
        return height - mb - (v - ylo) / (yhi - ylo) * (height - mt - mb)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif">\n',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>\n',
           f'<text x="{width / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>\n',
           f'<line x1="{ml}" y1="{height - mb}" x2="{width - mr}" y2="{height - mb}" stroke="black"/>\n',
           f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{height - mb}" stroke="black"/>\n']
    for v in np.linspace(xlo, xhi, 5):
        lab = f"{10 ** v:.3g}" if loglog else f"{v:.3g}"
        out.append(f'<text x="{X(v):.1f}" y="{height - mb + 16}" text-anchor="middle" font-size="11">{lab}</text>\n')
    for v in np.linspace(ylo, yhi, 5):
        lab = f"{10 ** v:.3g}" if loglog else f"{v:.3g}"
        out.append(f'<text x="{ml - 6}" y="{Y(v) + 4:.1f}" text-anchor="end" font-size="11">{lab}</text>\n')
    out.append(f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>\n')
    out.append(f'<text x="15" y="{height / 2}" text-anchor="middle" font-size="12" '
               f'transform="rotate(-90 15 {height / 2})">{escape(ylabel)}</text>\n')
    for n, ((label, _), x, y) in enumerate(zip(series.items(), xs, ys)):
        col = _SERIES[n % len(_SERIES)]
        ok = np.isfinite(x) & np.isfinite(y)
        pts = " ".join(f"{X(a):.1f},{Y(b):.1f}" for a, b in zip(x[ok], y[ok]))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{col}" stroke-width="2"/>\n')
        out.extend(f'<circle cx="{X(a):.1f}" cy="{Y(b):.1f}" r="3" fill="{col}"/>\n' for a, b in zip(x[ok], y[ok]))
        out.append(f'<text x="{width - mr - 5}" y="{mt + 14 * (n + 1)}" text-anchor="end" font-size="11" '
                   f'fill="{col}">{escape(label)}</text>\n')
    out.append("</svg>\n")
    Path(path).write_text("".join(out))
