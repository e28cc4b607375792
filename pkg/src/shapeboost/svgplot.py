"""Minimal static SVG emission for direction and scalar-effect displays.

Hand-rolled SVG keeps plot output byte-deterministic and dependency-free.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .factorize import DirectionVisual

__all__ = ["direction_svg", "scalar_effect_svg"]

_SIZE = 480.0
_MARGIN = 40.0


def _fmt(x: float) -> str:
    return f"{x:.3f}"


def _scaler(xs: np.ndarray, ys: np.ndarray):
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    span = max(x1 - x0, y1 - y0, 1e-12)
    inner = _SIZE - 2 * _MARGIN

    def to_px(x: float, y: float) -> tuple[float, float]:
        # y axis points up in data coordinates
        px = _MARGIN + (x - x0) / span * inner
        py = _SIZE - _MARGIN - (y - y0) / span * inner
        return px, py

    return to_px


def _polyline(points: list[tuple[float, float]], color: str, width: float, closed: bool = False) -> str:
    tag = "polygon" if closed else "polyline"
    pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)
    return f'<{tag} points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"/>'


def direction_svg(
    path: str | Path, visual: DirectionVisual, title: str = "", closed: bool = True, meta: str = ""
) -> None:
    """Pole outline, displaced outline Exp_p(tau*xi), and connecting segments."""
    pole = visual.pole_polyline
    disp = visual.displaced_polyline
    xs = np.concatenate([pole.real, disp.real])
    ys = np.concatenate([pole.imag, disp.imag])
    to_px = _scaler(xs, ys)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{int(_SIZE)}" height="{int(_SIZE)}" '
        f'viewBox="0 0 {int(_SIZE)} {int(_SIZE)}">',
    ]
    if meta:
        parts.append(f"<!-- {meta} -->")
    parts.append(f'<rect width="{int(_SIZE)}" height="{int(_SIZE)}" fill="white"/>')
    if title:
        parts.append(f'<text x="{_fmt(_MARGIN)}" y="24" font-family="sans-serif" font-size="14">{title}</text>')
    for a, b in visual.segments:
        xa, ya = to_px(a.real, a.imag)
        xb, yb = to_px(b.real, b.imag)
        parts.append(
            f'<line x1="{_fmt(xa)}" y1="{_fmt(ya)}" x2="{_fmt(xb)}" y2="{_fmt(yb)}" '
            'stroke="#bbbbbb" stroke-width="0.8"/>'
        )
    parts.append(_polyline([to_px(z.real, z.imag) for z in pole], "#888888", 1.5, closed))
    parts.append(_polyline([to_px(z.real, z.imag) for z in disp], "#1f77b4", 2.0, closed))
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def scalar_effect_svg(
    path: str | Path, z: np.ndarray, values: np.ndarray, title: str = "", meta: str = ""
) -> None:
    """Scalar effect function hhat^(r)(z) as a simple line plot with a zero axis."""
    z = np.asarray(z, dtype=float)
    values = np.asarray(values, dtype=float)
    x0, x1 = float(z.min()), float(z.max())
    lo = min(float(values.min()), 0.0)
    hi = max(float(values.max()), 0.0)
    if hi - lo < 1e-12:
        hi = lo + 1.0
    inner = _SIZE - 2 * _MARGIN

    def to_px(x: float, y: float) -> tuple[float, float]:
        px = _MARGIN + (x - x0) / max(x1 - x0, 1e-12) * inner
        py = _SIZE - _MARGIN - (y - lo) / (hi - lo) * inner
        return px, py

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{int(_SIZE)}" height="{int(_SIZE)}" '
        f'viewBox="0 0 {int(_SIZE)} {int(_SIZE)}">',
    ]
    if meta:
        parts.append(f"<!-- {meta} -->")
    parts.append(f'<rect width="{int(_SIZE)}" height="{int(_SIZE)}" fill="white"/>')
    if title:
        parts.append(f'<text x="{_fmt(_MARGIN)}" y="24" font-family="sans-serif" font-size="14">{title}</text>')
    zx0, zy0 = to_px(x0, 0.0)
    zx1, _ = to_px(x1, 0.0)
    parts.append(f'<line x1="{_fmt(zx0)}" y1="{_fmt(zy0)}" x2="{_fmt(zx1)}" y2="{_fmt(zy0)}" stroke="#cccccc" stroke-width="1"/>')
    parts.append(_polyline([to_px(x, y) for x, y in zip(z, values)], "#d62728", 2.0))
    for label, (px, py) in ((f"{x0:.3g}", to_px(x0, lo)), (f"{x1:.3g}", to_px(x1, lo))):
        parts.append(f'<text x="{_fmt(px)}" y="{_fmt(py + 16)}" font-family="sans-serif" font-size="11">{label}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
