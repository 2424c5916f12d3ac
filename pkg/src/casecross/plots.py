"""Minimal SVG line plots (no plotting dependency)."""

from __future__ import annotations

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def line_plot(series, title="", xlabel="", ylabel="", hlines=(), vlines=(), width=640, height=400,
              ylim=None) -> str:
    """series: iterable of dicts with x, y, and optional label/color/dash/opacity."""
    series = [s for s in series if len(s["x"])]
    ml, mr, mt, mb = 60, 150, 30, 45
    pw, ph = width - ml - mr, height - mt - mb
    xs = np.concatenate([np.asarray(s["x"], float) for s in series]) if series else np.array([0.0, 1.0])
    ys = np.concatenate([np.asarray(s["y"], float) for s in series]) if series else np.array([0.0, 1.0])
    ys = ys[np.isfinite(ys)]
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = ylim if ylim else (float(ys.min()), float(ys.max()))
    for h in hlines:
        y0, y1 = min(y0, h), max(y1, h)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1
    pad = 0.04 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def px(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def py(y):
        return mt + (y1 - y) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
           f'<text x="{ml + pw / 2}" y="18" text-anchor="middle" font-size="13">{title}</text>',
           f'<text x="{ml + pw / 2}" y="{height - 8}" text-anchor="middle">{xlabel}</text>',
           f'<text x="14" y="{mt + ph / 2}" text-anchor="middle" '
           f'transform="rotate(-90 14 {mt + ph / 2})">{ylabel}</text>']
    for v in np.linspace(x0, x1, 6):
        out.append(f'<text x="{px(v):.1f}" y="{mt + ph + 14}" text-anchor="middle">{v:.3g}</text>')
    for v in np.linspace(y0 + pad, y1 - pad, 6):
        out.append(f'<text x="{ml - 4}" y="{py(v) + 4:.1f}" text-anchor="end">{v:.3g}</text>')
    for h in hlines:
        out.append(f'<line x1="{ml}" x2="{ml + pw}" y1="{py(h):.1f}" y2="{py(h):.1f}" stroke="#999" '
                   f'stroke-dasharray="4 3"/>')
    for v in vlines:
        if x0 <= v <= x1:
            out.append(f'<line x1="{px(v):.1f}" x2="{px(v):.1f}" y1="{mt}" y2="{mt + ph}" stroke="#999"/>')
    legend_y = mt + 10
    for i, s in enumerate(series):
        color = s.get("color", PALETTE[i % len(PALETTE)])
        dash = f' stroke-dasharray="{s["dash"]}"' if s.get("dash") else ""
        op = s.get("opacity", 1.0)
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(s["x"], s["y"]) if np.isfinite(y))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5" '
                   f'stroke-opacity="{op}"{dash}/>')
        if s.get("label"):
            out.append(f'<line x1="{ml + pw + 10}" x2="{ml + pw + 30}" y1="{legend_y}" y2="{legend_y}" '
                       f'stroke="{color}" stroke-width="2"{dash}/>')
            out.append(f'<text x="{ml + pw + 34}" y="{legend_y + 4}">{s["label"]}</text>')
            legend_y += 16
    out.append("</svg>")
    return "\n".join(out) + "\n"
