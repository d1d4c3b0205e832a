"""Seven-segment digit rendering and template matching.

The renderer and the matcher share one glyph geometry (`SevenSegLayout`), so
a pristine rendered reading always matches its own templates with correlation
1.0. The matcher first normalizes incoming images back to the canonical plate
geometry (inferring the digit count from the aspect ratio), which keeps the
fixed-pitch grid aligned on rescaled inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .imaging import RasterImage, _resize_bilinear

# segment letters: a top, b top-right, c bottom-right, d bottom,
# e bottom-left, f top-left, g middle
SEGMENTS = {
    "0": "abcdef",
    "1": "bc",
    "2": "abdeg",
    "3": "abcdg",
    "4": "bcfg",
    "5": "acdfg",
    "6": "acdefg",
    "7": "abc",
    "8": "abcdefg",
    "9": "abcdfg",
}


@dataclass(frozen=True)
class SevenSegLayout:
    """Fixed-pitch glyph geometry shared by generator and matcher."""

    digit_width: int = 40
    digit_height: int = 64
    thickness: int = 8
    gap: int = 12
    margin: int = 16
    background: int = 28
    foreground: int = 232

    @property
    def pitch(self) -> int:
        return self.digit_width + self.gap

    @property
    def image_height(self) -> int:
        return 2 * self.margin + self.digit_height

    def image_width(self, n_digits: int) -> int:
        return 2 * self.margin + n_digits * self.digit_width + (n_digits - 1) * self.gap


DEFAULT_LAYOUT = SevenSegLayout()


def _segment_rects(layout: SevenSegLayout) -> dict[str, tuple[int, int, int, int]]:
    w, h, t = layout.digit_width, layout.digit_height, layout.thickness
    half = h // 2
    return {
        "a": (0, 0, w, t),
        "b": (w - t, 0, t, half),
        "c": (w - t, half, t, h - half),
        "d": (0, h - t, w, t),
        "e": (0, half, t, h - half),
        "f": (0, 0, t, half),
        "g": (0, (h - t) // 2, w, t),
    }


@lru_cache(maxsize=8)
def glyph_templates(layout: SevenSegLayout = DEFAULT_LAYOUT) -> np.ndarray:
    """The ten digit templates as a (10, digit_height, digit_width) uint8 stack."""
    rects = _segment_rects(layout)
    stack = np.full(
        (10, layout.digit_height, layout.digit_width), layout.background, dtype=np.uint8
    )
    for digit, segs in SEGMENTS.items():
        cell = stack[int(digit)]
        for s in segs:
            x, y, w, h = rects[s]
            cell[y : y + h, x : x + w] = layout.foreground
    return stack


def render_reading(text: str, layout: SevenSegLayout = DEFAULT_LAYOUT) -> RasterImage:
    """Render a digit string on a meter-like plate with margins (grayscale)."""
    if not text or not text.isdigit():
        raise ValueError("reading must be a non-empty digit string")
    templates = glyph_templates(layout)
    plate = np.full(
        (layout.image_height, layout.image_width(len(text))), layout.background, dtype=np.uint8
    )
    for i, ch in enumerate(text):
        x = layout.margin + i * layout.pitch
        plate[
            layout.margin : layout.margin + layout.digit_height,
            x : x + layout.digit_width,
        ] = templates[int(ch)]
    return RasterImage(plate)


@dataclass(frozen=True)
class CellMatch:
    """Best-scoring digit for one fixed-pitch cell, bbox in source pixels."""

    index: int
    digit: str
    score: float
    x: int
    y: int
    w: int
    h: int


def _ncc(cell: np.ndarray, template: np.ndarray) -> float:
    a = cell.astype(np.float64) - cell.mean()
    b = template.astype(np.float64) - template.mean()
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    if denom == 0.0:
        return -1.0
    return float((a * b).sum() / denom)


def infer_digit_count(width: int, height: int, layout: SevenSegLayout = DEFAULT_LAYOUT) -> int:
    """Digit count implied by the image aspect at canonical plate height."""
    width_at_canonical = width * layout.image_height / height
    return round((width_at_canonical - 2 * layout.margin + layout.gap) / layout.pitch)


def match_cells(
    img: RasterImage, layout: SevenSegLayout = DEFAULT_LAYOUT
) -> list[CellMatch]:
    """Score every fixed-pitch digit cell against all ten templates.

    The image is resized to the canonical plate geometry for the inferred
    digit count, then each cell is scored by normalized cross-correlation.
    Returns the argmax digit per cell with its correlation, unfiltered; a
    flat (zero-variance) cell scores -1.
    """
    gray = img.to_gray().pixels[:, :, 0]
    n = infer_digit_count(gray.shape[1], gray.shape[0], layout)
    if n < 1:
        return []
    canon_h, canon_w = layout.image_height, layout.image_width(n)
    x_ratio = img.width / canon_w
    y_ratio = img.height / canon_h
    if gray.shape != (canon_h, canon_w):
        gray = _resize_bilinear(gray[:, :, np.newaxis], canon_h, canon_w)[:, :, 0]

    templates = glyph_templates(layout)
    matches: list[CellMatch] = []
    for i in range(n):
        x0 = layout.margin + i * layout.pitch
        cell = gray[
            layout.margin : layout.margin + layout.digit_height,
            x0 : x0 + layout.digit_width,
        ]
        scores = [_ncc(cell, templates[d]) for d in range(10)]
        best = int(np.argmax(scores))
        # bbox mapped back to source-image pixels, clamped inside bounds
        sx = min(int(round(x0 * x_ratio)), img.width - 1)
        sy = min(int(round(layout.margin * y_ratio)), img.height - 1)
        sw = max(1, min(int(round(layout.digit_width * x_ratio)), img.width - sx))
        sh = max(1, min(int(round(layout.digit_height * y_ratio)), img.height - sy))
        matches.append(
            CellMatch(index=i, digit=str(best), score=scores[best], x=sx, y=sy, w=sw, h=sh)
        )
    return matches
