"""Standalone SVG emission for trajectory and scatter figures.

No plotting dependency: figures are built as SVG 1.1 text.  Coordinate
mapping is fixed and linear: the data rectangle maps onto the drawing
area (canvas minus a 45 px margin) with the y axis flipped so larger y is
up.  Trajectory figures draw the court rectangle, ground-truth paths,
predicted paths, observed-state dots, and 1.96-sigma uncertainty ellipses
at unobserved states.
"""

from __future__ import annotations

import numpy as np

from .data import Bounds, Scene
from .sampling import PosteriorField

__all__ = ["trajectory_svg", "scatter_svg"]

MARGIN = 45.0
Z95 = 1.96

_PALETTE = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
    "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f", "#aec7e8",
]


class _Canvas:
    def __init__(self, width: float, height: float):
        self.width = width
        self.height = height
        self.parts: list[str] = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
            f'height="{height:.0f}" viewBox="0 0 {width:.0f} {height:.0f}">',
            f'<rect x="0" y="0" width="{width:.0f}" height="{height:.0f}" fill="white"/>',
        ]

    def add(self, element: str) -> None:
        self.parts.append(element)

    def text(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


class _Mapper:
    """Linear data-to-pixel map over the drawing area, y flipped."""

    def __init__(self, x_range, y_range, width, height):
        self.x0, self.x1 = x_range
        self.y0, self.y1 = y_range
        self.sx = (width - 2 * MARGIN) / (self.x1 - self.x0)
        self.sy = (height - 2 * MARGIN) / (self.y1 - self.y0)
        self.height = height

    def px(self, x: float) -> float:
        return MARGIN + (x - self.x0) * self.sx

    def py(self, y: float) -> float:
        return self.height - MARGIN - (y - self.y0) * self.sy


def _polyline(points, color: str, width: float, dash: str = "") -> str:
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
    dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
    return (
        f'<polyline points="{pts}" fill="none" stroke="{color}" '
        f'stroke-width="{width:.1f}"{dash_attr}/>'
    )


def trajectory_svg(
    scene: Scene,
    field: PosteriorField | None = None,
    width: float = 900.0,
    height: float = 540.0,
    title: str = "",
) -> str:
    """Scene figure: ground truth, optional predicted mode with ellipses."""
    bounds: Bounds = scene.bounds
    canvas = _Canvas(width, height)
    m = _Mapper((bounds.x_min, bounds.x_max), (bounds.y_min, bounds.y_max), width, height)
    canvas.add(
        f'<rect x="{m.px(bounds.x_min):.2f}" y="{m.py(bounds.y_max):.2f}" '
        f'width="{(bounds.x_max - bounds.x_min) * m.sx:.2f}" '
        f'height="{(bounds.y_max - bounds.y_min) * m.sy:.2f}" '
        'fill="#f7f7f2" stroke="#444444" stroke-width="1.5"/>'
    )
    if title:
        canvas.add(f'<text x="{MARGIN:.0f}" y="25" font-size="16" fill="#222">{title}</text>')

    T, N = scene.T, scene.N
    for n in range(N):
        color = _PALETTE[n % len(_PALETTE)]
        gt = [(m.px(x), m.py(y)) for x, y in scene.x[:, n]]
        canvas.add(_polyline(gt, color, 1.2, dash="4,3"))
        for t in range(T):
            if scene.mask[t, n] == 1.0:
                canvas.add(
                    f'<circle cx="{m.px(scene.x[t, n, 0]):.2f}" '
                    f'cy="{m.py(scene.x[t, n, 1]):.2f}" r="2.2" fill="{color}"/>'
                )
        if field is None:
            continue
        pred = [(m.px(x), m.py(y)) for x, y in field.mean[:, n]]
        canvas.add(_polyline(pred, color, 2.0))
        for t in range(T):
            if scene.mask[t, n] == 0.0:
                sx = Z95 * np.sqrt(field.var[t, n, 0]) * m.sx
                sy = Z95 * np.sqrt(field.var[t, n, 1]) * m.sy
                canvas.add(
                    f'<ellipse cx="{m.px(field.mean[t, n, 0]):.2f}" '
                    f'cy="{m.py(field.mean[t, n, 1]):.2f}" '
                    f'rx="{abs(sx):.2f}" ry="{abs(sy):.2f}" '
                    f'fill="{color}" fill-opacity="0.12" '
                    f'stroke="{color}" stroke-width="0.6" stroke-opacity="0.5"/>'
                )
    return canvas.text()


def scatter_svg(
    series: dict[str, tuple[np.ndarray, np.ndarray]],
    x_label: str,
    y_label: str,
    width: float = 620.0,
    height: float = 460.0,
    title: str = "",
) -> str:
    """Scatter figure with one color per named series and a small legend."""
    xs = np.concatenate([np.asarray(v[0], dtype=float) for v in series.values()])
    ys = np.concatenate([np.asarray(v[1], dtype=float) for v in series.values()])
    pad_x = (xs.max() - xs.min()) * 0.08 or 1.0
    pad_y = (ys.max() - ys.min()) * 0.08 or 1.0
    canvas = _Canvas(width, height)
    m = _Mapper(
        (xs.min() - pad_x, xs.max() + pad_x),
        (ys.min() - pad_y, ys.max() + pad_y),
        width,
        height,
    )
    canvas.add(
        f'<rect x="{MARGIN:.0f}" y="{MARGIN:.0f}" width="{width - 2 * MARGIN:.0f}" '
        f'height="{height - 2 * MARGIN:.0f}" fill="none" stroke="#444" stroke-width="1"/>'
    )
    if title:
        canvas.add(f'<text x="{MARGIN:.0f}" y="25" font-size="15" fill="#222">{title}</text>')
    canvas.add(
        f'<text x="{width / 2:.0f}" y="{height - 10:.0f}" font-size="13" '
        f'text-anchor="middle" fill="#222">{x_label}</text>'
    )
    canvas.add(
        f'<text x="14" y="{height / 2:.0f}" font-size="13" text-anchor="middle" '
        f'fill="#222" transform="rotate(-90 14 {height / 2:.0f})">{y_label}</text>'
    )
    for i, (name, (sx, sy)) in enumerate(series.items()):
        color = _PALETTE[(i * 4 + 1) % len(_PALETTE)]
        for x, y in zip(np.asarray(sx, dtype=float), np.asarray(sy, dtype=float)):
            canvas.add(
                f'<circle cx="{m.px(x):.2f}" cy="{m.py(y):.2f}" r="3.4" '
                f'fill="{color}" fill-opacity="0.75"/>'
            )
        canvas.add(
            f'<circle cx="{width - MARGIN - 110:.0f}" cy="{MARGIN + 16 + 18 * i:.0f}" '
            f'r="4" fill="{color}"/>'
        )
        canvas.add(
            f'<text x="{width - MARGIN - 100:.0f}" y="{MARGIN + 20 + 18 * i:.0f}" '
            f'font-size="12" fill="#222">{name}</text>'
        )
    return canvas.text()
