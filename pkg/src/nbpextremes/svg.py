"""Minimal SVG line and grouped-bar charts for diagnostic output."""
from __future__ import annotations

import math
from html import escape

PALETTE = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d",
           "#666666")
W, H = 720, 400
ML, MR, MT, MB = 70, 150, 40, 50


def _fmt(v):
    return f"{v:.4g}"


def _frame(title, xlabel, ylabel, lo, hi):
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<line x1="{ML}" y1="{H - MB}" x2="{W - MR}" y2="{H - MB}" stroke="black"/>',
           f'<line x1="{ML}" y1="{MT}" x2="{ML}" y2="{H - MB}" stroke="black"/>',
           f'<text x="{(ML + W - MR) / 2}" y="{H - 10}" text-anchor="middle">{escape(xlabel)}</text>',
           f'<text x="15" y="{(MT + H - MB) / 2}" text-anchor="middle" '
           f'transform="rotate(-90 15 {(MT + H - MB) / 2})">{escape(ylabel)}</text>']
    for k in range(5):
        v = lo + (hi - lo) * k / 4
        y = _y(v, lo, hi)
        out.append(f'<text x="{ML - 5}" y="{y + 4:.1f}" text-anchor="end">{_fmt(v)}</text>')
    return out


def _y(v, lo, hi):
    return H - MB - (v - lo) / (hi - lo) * (H - MB - MT)


def _range(values):
    finite = [v for v in values if math.isfinite(v)]
    if not finite:
        return 0.0, 1.0
    lo, hi = min(finite + [0.0]), max(finite + [0.0])
    if hi == lo:
        hi = lo + 1.0
    return lo, hi


def _legend(names):
    out = []
    for k, name in enumerate(names):
        y = MT + 15 * k
        out.append(f'<rect x="{W - MR + 10}" y="{y}" width="10" height="10" '
                   f'fill="{PALETTE[k % len(PALETTE)]}"/>')
        out.append(f'<text x="{W - MR + 25}" y="{y + 9}">{escape(str(name))}</text>')
    return out


def line_chart(series, path, title="", xlabel="", ylabel=""):
    """``series`` maps legend name -> list of y values (shared implicit x)."""
    allv = [v for ys in series.values() for v in ys]
    lo, hi = _range(allv)
    n = max((len(ys) for ys in series.values()), default=1)
    out = _frame(title, xlabel, ylabel, lo, hi)
    for k, (name, ys) in enumerate(series.items()):
        pts = []
        for i, v in enumerate(ys):
            if math.isfinite(v):
                x = ML + (W - ML - MR) * (i / max(n - 1, 1))
                pts.append(f"{x:.1f},{_y(v, lo, hi):.1f}")
        out.append(f'<polyline fill="none" stroke="{PALETTE[k % len(PALETTE)]}" '
                   f'stroke-width="1" points="{" ".join(pts)}"/>')
    out += _legend(series)
    out.append("</svg>")
    _write(path, out)


def bar_chart(groups, path, title="", xlabel="", ylabel=""):
    """``groups`` maps category label -> {series name: value}."""
    names = []
    for vals in groups.values():
        for name in vals:
            if name not in names:
                names.append(name)
    lo, hi = _range([v for vals in groups.values() for v in vals.values()])
    out = _frame(title, xlabel, ylabel, lo, hi)
    gw = (W - ML - MR) / max(len(groups), 1)
    bw = gw * 0.8 / max(len(names), 1)
    for g, (label, vals) in enumerate(groups.items()):
        x0 = ML + g * gw + gw * 0.1
        for k, name in enumerate(names):
            if name not in vals:
                continue
            v = vals[name]
            y0, y1 = _y(0.0, lo, hi), _y(v, lo, hi)
            out.append(f'<rect x="{x0 + k * bw:.1f}" y="{min(y0, y1):.1f}" width="{bw:.1f}" '
                       f'height="{abs(y1 - y0):.1f}" fill="{PALETTE[k % len(PALETTE)]}"/>')
        out.append(f'<text x="{x0 + gw * 0.4:.1f}" y="{H - MB + 14}" text-anchor="middle" '
                   f'font-size="9">{escape(str(label))}</text>')
    out += _legend(names)
    out.append("</svg>")
    _write(path, out)


def _write(path, lines):
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
