"""Synthetic photo/sketch domains.

A geometry (a few ellipses, rectangles and strokes) renders to a grayscale line
sketch and to a colour "photo". The photo palette is driven by a hidden hue class
that never touches the sketch renderer, so sketches carry no information about it.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, field

import numpy as np

SHAPES = ("ellipse", "rectangle", "stroke")
# interior tone of each shape kind in the sketch domain ([0, 1], 1 = paper white)
_SKETCH_FILL = {"ellipse": 0.78, "rectangle": 0.62, "stroke": 0.25}
_PAPER = 0.96
_INK = 0.08


@dataclass(frozen=True)
class SyntheticDomainSpec:
    image_size: int = 32
    n_hues: int = 8
    shapes: tuple[str, ...] = SHAPES
    min_shapes: int = 2
    max_shapes: int = 4
    seed: int = 0


@dataclass
class Shape:
    kind: str
    cy: float
    cx: float
    ry: float
    rx: float
    angle: float = 0.0
    tone: float = 0.5           # photo lightness factor, geometry-bound

    def mask(self, size: int) -> np.ndarray:
        yy, xx = np.mgrid[0:size, 0:size] + 0.5
        dy, dx = yy - self.cy, xx - self.cx
        c, s = np.cos(self.angle), np.sin(self.angle)
        u, v = c * dx + s * dy, -s * dx + c * dy
        if self.kind == "ellipse":
            return (u / self.rx) ** 2 + (v / self.ry) ** 2 <= 1.0
        if self.kind == "rectangle":
            return (np.abs(u) <= self.rx) & (np.abs(v) <= self.ry)
        # stroke: thin oriented bar
        return (np.abs(u) <= self.rx) & (np.abs(v) <= max(1.0, self.ry * 0.25))


@dataclass
class Item:
    shapes: list[Shape] = field(default_factory=list)
    hue: int = 0


def sample_geometry(rng: np.random.Generator, spec: SyntheticDomainSpec) -> list[Shape]:
    S = spec.image_size
    n = int(rng.integers(spec.min_shapes, spec.max_shapes + 1))
    out = []
    for _ in range(n):
        kind = spec.shapes[int(rng.integers(len(spec.shapes)))]
        out.append(Shape(
            kind=kind,
            cy=float(rng.uniform(0.2, 0.8) * S), cx=float(rng.uniform(0.2, 0.8) * S),
            ry=float(rng.uniform(0.12, 0.3) * S), rx=float(rng.uniform(0.12, 0.3) * S),
            angle=float(rng.uniform(0, np.pi)), tone=float(rng.uniform(0.3, 1.0)),
        ))
    return out


def _edges(mask: np.ndarray) -> np.ndarray:
    inner = mask.copy()
    inner[1:, :] &= mask[:-1, :]
    inner[:-1, :] &= mask[1:, :]
    inner[:, 1:] &= mask[:, :-1]
    inner[:, :-1] &= mask[:, 1:]
    return mask & ~inner


def render_sketch(shapes: list[Shape], size: int) -> np.ndarray:
    """[1, S, S] sketch in [0, 1]; depends on geometry only."""
    img = np.full((size, size), _PAPER)
    for sh in shapes:
        m = sh.mask(size)
        img[m] = _SKETCH_FILL[sh.kind]
        img[_edges(m)] = _INK
    return img[None]


def hue_rgb(hue: int, n_hues: int, value: float = 0.85, saturation: float = 0.65) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(hue / n_hues, saturation, value))


def render_photo(shapes: list[Shape], hue: int, size: int, n_hues: int) -> np.ndarray:
    """[3, S, S] photo in [0, 1]: hue-tinted background and shape fills."""
    bg = hue_rgb(hue, n_hues, value=0.85, saturation=0.45)
    img = np.broadcast_to(bg[:, None, None], (3, size, size)).copy()
    yy = np.linspace(0.9, 1.05, size)[:, None]
    img *= yy[None]                                  # soft vertical shading
    for sh in shapes:
        m = sh.mask(size)
        col = hue_rgb(hue, n_hues, value=0.25 + 0.6 * sh.tone, saturation=0.8)
        img[:, m] = col[:, None]
    return np.clip(img, 0.0, 1.0)


def to_signed(x01: np.ndarray) -> np.ndarray:
    return x01 * 2.0 - 1.0


def gen_synthetic_domains(spec: SyntheticDomainSpec, count: int):
    """Return (photos [N,3,S,S], sketches [N,1,S,S], hues [N]) in [-1, 1], deterministic in seed."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(spec.seed)
    S = spec.image_size
    photos = np.empty((count, 3, S, S))
    sketches = np.empty((count, 1, S, S))
    hues = np.empty(count, dtype=np.int64)
    for i in range(count):
        shapes = sample_geometry(rng, spec)
        hue = int(rng.integers(spec.n_hues))
        photos[i] = render_photo(shapes, hue, S, spec.n_hues)
        sketches[i] = render_sketch(shapes, S)
        hues[i] = hue
    return to_signed(photos), to_signed(sketches), hues
