"""Tiny dependency-free SVG heatmap writer for (a, b) sweep grids."""

from __future__ import annotations

from pathlib import Path

import numpy as np

__all__ = ["write_heatmap_svg"]

CELL = 40
MARGIN = 60


def _color(v: float) -> str:
    """Blue (0) -> yellow (1) ramp; NaN cells are grey."""
    if v is None or not np.isfinite(v):
        return "#bbbbbb"
    v = min(1.0, max(0.0, v))
    r = int(40 + 215 * v)
    g = int(40 + 200 * v)
    b = int(140 - 100 * v)
    return f"#{r:02x}{g:02x}{b:02x}"


def write_heatmap_svg(path, a_values, b_values, rows, k: int | None = None,
                      title: str = "mean AMI"):
    """Render sweep rows (dicts with a, b, mean_ami) plus the threshold curve."""
    a_values = sorted({float(a) for a in a_values})
    b_values = sorted({float(b) for b in b_values})
    a_idx = {a: i for i, a in enumerate(a_values)}
    b_idx = {b: i for i, b in enumerate(b_values)}
    width = MARGIN * 2 + CELL * len(a_values)
    height = MARGIN * 2 + CELL * len(b_values)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="{width / 2:.0f}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
    ]
    for r in rows:
        i = a_idx[float(r["a"])]
        j = b_idx[float(r["b"])]
        x = MARGIN + i * CELL
        # b grows upward
        y = MARGIN + (len(b_values) - 1 - j) * CELL
        parts.append(
            f'<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" '
            f'fill="{_color(r.get("mean_ami"))}" stroke="#ffffff"/>'
        )
        if r.get("mean_ami") is not None:
            parts.append(
                f'<text x="{x + CELL / 2:.0f}" y="{y + CELL / 2 + 4:.0f}" '
                f'text-anchor="middle" font-family="sans-serif" font-size="9">'
                f'{r["mean_ami"]:.2f}</text>'
            )
    for i, a in enumerate(a_values):
        parts.append(
            f'<text x="{MARGIN + i * CELL + CELL / 2:.0f}" y="{height - MARGIN + 16}" '
            f'text-anchor="middle" font-family="sans-serif" font-size="10">{a:g}</text>'
        )
    for j, b in enumerate(b_values):
        y = MARGIN + (len(b_values) - 1 - j) * CELL
        parts.append(
            f'<text x="{MARGIN - 8}" y="{y + CELL / 2 + 4:.0f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="10">{b:g}</text>'
        )
    if k is not None and len(a_values) > 1 and len(b_values) > 1:
        # threshold curve b = (sqrt(a) - sqrt(k))^2 in cell coordinates
        pts = []
        a_lo, a_hi = a_values[0], a_values[-1]
        b_lo, b_hi = b_values[0], b_values[-1]
        for a in np.linspace(a_lo, a_hi, 120):
            root = np.sqrt(a) - np.sqrt(k)
            if root < 0:
                continue
            b = root * root
            if not b_lo <= b <= b_hi:
                continue
            x = MARGIN + (a - a_lo) / (a_hi - a_lo) * CELL * (len(a_values) - 1) + CELL / 2
            y = MARGIN + (1 - (b - b_lo) / (b_hi - b_lo)) * CELL * (len(b_values) - 1) + CELL / 2
            pts.append(f"{x:.1f},{y:.1f}")
        if len(pts) > 1:
            parts.append(
                f'<polyline points="{" ".join(pts)}" fill="none" '
                f'stroke="#cc0000" stroke-width="2" stroke-dasharray="6,4"/>'
            )
    parts.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(parts))
