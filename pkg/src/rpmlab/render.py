"""Deterministic 80x80 grayscale rasterizer for panel specs.

No anti-aliasing anywhere: masks come from exact point-in-polygon tests on
pixel centers, outlines from dense edge sampling rounded to pixels. The
same (panel, seed) always produces byte-identical images.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .rpm_core import LINE_KINDS, SHAPE_TYPES, PanelSpec, group_layout

SIZE = 80
BACKGROUND = 255
OUTLINE = 0

# pixel-center coordinate grids, shared by all draws
_YY, _XX = np.mgrid[0:SIZE, 0:SIZE].astype(np.float64) + 0.5

# polygon vertex counts per shape type; circle handled separately
_POLY_SIDES = {"triangle": 3, "square": 4, "pentagon": 5, "hexagon": 6}


def color_to_gray(color: int) -> int:
    """Gray levels 200 (light) down to 56 (dark); background stays 255."""
    return 200 - 16 * color


def size_to_radius(size: int, base_radius: float) -> float:
    return base_radius * (6 + 2 * size) / 16.0


def _polygon_vertices(cx: float, cy: float, r: float, sides: int):
    # -90 degree offset points triangles up; squares get an extra -45 so
    # they render axis-aligned rather than as diamonds
    offset = -np.pi / 2 + (-np.pi / 4 if sides == 4 else 0.0)
    angles = offset + 2 * np.pi * np.arange(sides) / sides
    return np.stack([cx + r * np.cos(angles), cy + r * np.sin(angles)], axis=1)


def _polygon_mask(vertices: np.ndarray) -> np.ndarray:
    inside = np.zeros((SIZE, SIZE), dtype=bool)
    n = len(vertices)
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        if y1 == y2:
            continue
        crosses = (y1 > _YY) != (y2 > _YY)
        xint = x1 + (_YY - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (_XX < xint)
    return inside


def _draw_segment(img: np.ndarray, x1, y1, x2, y2, value: int) -> None:
    length = max(abs(x2 - x1), abs(y2 - y1))
    steps = max(2, int(np.ceil(length * 3)))
    ts = np.linspace(0.0, 1.0, steps)
    xs = np.clip(np.floor(x1 + (x2 - x1) * ts).astype(int), 0, SIZE - 1)
    ys = np.clip(np.floor(y1 + (y2 - y1) * ts).astype(int), 0, SIZE - 1)
    img[ys, xs] = value


def _draw_shape(img: np.ndarray, shape_type: str, cx: float, cy: float,
                r: float, gray: int, outline_only: bool) -> None:
    if shape_type == "circle":
        dist = np.sqrt((_XX - cx) ** 2 + (_YY - cy) ** 2)
        if not outline_only:
            img[dist <= r] = gray
        img[np.abs(dist - r) <= 0.7] = OUTLINE
        return
    vertices = _polygon_vertices(cx, cy, r, _POLY_SIDES[shape_type])
    if not outline_only:
        img[_polygon_mask(vertices)] = gray
    n = len(vertices)
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        _draw_segment(img, x1, y1, x2, y2, OUTLINE)


def _draw_lines(img: np.ndarray, line_set, gray: int) -> None:
    for kind_index in sorted(line_set):
        kind = LINE_KINDS[kind_index]
        if kind == "horizontal":
            mask = np.abs(_YY - SIZE / 2) <= 1.0
        elif kind == "vertical":
            mask = np.abs(_XX - SIZE / 2) <= 1.0
        elif kind == "diag_down":
            mask = np.abs(_XX - _YY) <= 1.2
        else:  # diag_up
            mask = np.abs(_XX + _YY - SIZE) <= 1.2
        img[mask] = gray


def render(panel: PanelSpec, seed: int) -> np.ndarray:
    """Rasterize a panel spec; pure function of (panel, seed).

    The seed only drives a +/-1 px position jitter per entity, small enough
    that no attribute semantics are affected.
    """
    img = np.full((SIZE, SIZE), BACKGROUND, dtype=np.uint8)
    rng = np.random.default_rng(seed)
    # background lines first, then shapes on top (painter's order)
    ordered = sorted(panel.groups, key=lambda kv: kv[1].kind != "line")
    for name, spec in ordered:
        layout = group_layout(panel.config, panel.family, name)
        if spec.kind == "line":
            _draw_lines(img, spec.line_set, color_to_gray(spec.color))
            continue
        occupied = sorted(spec.positions)
        seen = set()
        for slot in occupied:
            if slot in seen:
                raise ConfigError(f"two entities share slot {slot} in "
                                  f"group {name!r}")
            seen.add(slot)
            cx, cy = layout.slots[slot]
            jx, jy = rng.integers(-1, 2, size=2)
            r = size_to_radius(spec.size, layout.radius)
            _draw_shape(img, SHAPE_TYPES[spec.shape_type], cx + jx, cy + jy,
                        r, color_to_gray(spec.color), layout.outline_only)
    return img
