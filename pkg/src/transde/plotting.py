"""Standalone SVG line plot of anomaly scores with labelled spans shaded."""
from __future__ import annotations

from typing import Optional
from xml.sax.saxutils import escape

import numpy as np


def scores_svg(scores, labels: Optional[np.ndarray] = None, threshold: Optional[float] = None,
               title: str = "anomaly score", width: int = 900, height: int = 260) -> str:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise ValueError("scores must be a non-empty 1-D array")
    pad = 30
    T = scores.size
    lo, hi = float(scores.min()), float(scores.max())
    if threshold is not None:
        lo, hi = min(lo, threshold), max(hi, threshold)
    span = hi - lo or 1.0

    def x(t):
        return pad + (width - 2 * pad) * t / max(T - 1, 1)

    def y(v):
        return height - pad - (height - 2 * pad) * (v - lo) / span

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{pad}" y="{pad - 10}" font-family="sans-serif" font-size="12">{escape(title)}</text>',
    ]
    if labels is not None:
        labels = np.asarray(labels).astype(np.int64)
        edges = np.flatnonzero(np.diff(np.concatenate([[0], labels, [0]])))
        for start, end in edges.reshape(-1, 2):
            x0, x1 = x(start), x(end - 1)
            parts.append(f'<rect x="{x0:.2f}" y="{pad}" width="{max(x1 - x0, 1.0):.2f}" '
                         f'height="{height - 2 * pad}" fill="#f4a6a6" fill-opacity="0.5"/>')
    points = " ".join(f"{x(t):.2f},{y(v):.2f}" for t, v in enumerate(scores))
    parts.append(f'<polyline fill="none" stroke="#1f4e9c" stroke-width="1" points="{points}"/>')
    if threshold is not None:
        ty = y(threshold)
        parts.append(f'<line x1="{pad}" y1="{ty:.2f}" x2="{width - pad}" y2="{ty:.2f}" '
                     f'stroke="#444" stroke-dasharray="4 3"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
