"""Deterministic rasterization of synthetic screens.

Screens render as a background fill plus one filled rectangle per
component. Each icon class owns a distinct base color (hue-spaced, so the
class -> color map is injective) and a coarse 2x3 cell pattern derived
from the class index; coarse cells survive the 16x16 downsampling used by
the vision encoder. The background hue sits inside the app type's sector
with a per-app offset, so whole-screen crops identify both.
"""

from __future__ import annotations

import colorsys

import numpy as np

from .vh import BoundingBox

_BORDER = 3


def hsv_to_rgb8(h: float, s: float, v: float) -> tuple[int, int, int]:
    r, g, b = colorsys.hsv_to_rgb(h % 1.0, s, v)
    return int(round(r * 255)), int(round(g * 255)), int(round(b * 255))


def icon_color(icon_class: int, n_classes: int) -> tuple[int, int, int]:
    """Base fill color of an icon class; injective over classes."""
    return hsv_to_rgb8(icon_class / n_classes, 0.65, 0.85)


def icon_accent(icon_class: int, n_classes: int) -> tuple[int, int, int]:
    return hsv_to_rgb8(icon_class / n_classes, 0.35, 1.0)


def glyph_cells(glyph_id: int) -> list[bool]:
    """Six-cell (2x3) lit pattern for a glyph id, never all-off."""
    bits = (glyph_id * 37 + 11) % 63 + 1
    return [(bits >> i) & 1 == 1 for i in range(6)]


def draw_component(raster: np.ndarray, bounds: BoundingBox, icon_class: int, n_classes: int) -> None:
    x0, y0, x1, y1 = bounds.x_min, bounds.y_min, bounds.x_max, bounds.y_max
    raster[y0:y1, x0:x1] = icon_color(icon_class, n_classes)
    # inner region carries the glyph pattern
    ix0, iy0 = x0 + _BORDER, y0 + _BORDER
    ix1, iy1 = x1 - _BORDER, y1 - _BORDER
    if ix1 - ix0 < 3 or iy1 - iy0 < 2:
        return
    accent = icon_accent(icon_class, n_classes)
    cells = glyph_cells(icon_class)
    xs = np.linspace(ix0, ix1, 4).astype(int)
    ys = np.linspace(iy0, iy1, 3).astype(int)
    for row in range(2):
        for col in range(3):
            if cells[row * 3 + col]:
                raster[ys[row] : ys[row + 1], xs[col] : xs[col + 1]] = accent


def render_screen(spec: "ScreenSpec") -> np.ndarray:  # noqa: F821 (synth imports us)
    """Render a screen spec to an HxWx3 uint8 raster, pre-order draw order."""
    raster = np.empty((spec.height, spec.width, 3), dtype=np.uint8)
    raster[:, :] = spec.bg_rgb
    for comp in spec.components:
        draw_component(raster, comp.bounds, comp.icon_class, spec.n_icon_classes)
    return raster


def crop(raster: np.ndarray, bounds: BoundingBox) -> np.ndarray:
    """View of the raster region covered by a component."""
    return raster[bounds.y_min : bounds.y_max, bounds.x_min : bounds.x_max]
