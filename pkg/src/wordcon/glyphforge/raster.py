"""Deterministic word rasterizer with bold / italic / underline control."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, ImageDraw

from .font import FONT_CLASSES, GLYPHS, GRID_H, GRID_W, FontClass, with_serifs

ATTRIBUTE_TYPES = ("bold", "italic", "underline")
MIN_PX_HEIGHT = 8


class UnsupportedCharacterError(ValueError):
    pass


class RenderSizeError(ValueError):
    pass


@dataclass(frozen=True)
class AttributeSet:
    bold: bool = False
    italic: bool = False
    underline: bool = False
    font_class: str = "sans"

    def __post_init__(self):
        if self.font_class not in FONT_CLASSES:
            raise ValueError(f"unknown font class {self.font_class!r}; expected one of {sorted(FONT_CLASSES)}")

    @property
    def flags(self) -> tuple[bool, bool, bool]:
        return (self.bold, self.italic, self.underline)

    @property
    def is_plain(self) -> bool:
        return not any(self.flags)

    def active(self) -> list[str]:
        return [name for name, on in zip(ATTRIBUTE_TYPES, self.flags) if on]

    def with_flags(self, **flags: bool) -> "AttributeSet":
        values = {"bold": self.bold, "italic": self.italic, "underline": self.underline}
        values.update(flags)
        return AttributeSet(font_class=self.font_class, **values)

    def to_dict(self) -> dict:
        return {"bold": self.bold, "italic": self.italic, "underline": self.underline, "font_class": self.font_class}

    @classmethod
    def from_dict(cls, d: dict) -> "AttributeSet":
        return cls(
            bold=bool(d.get("bold", False)),
            italic=bool(d.get("italic", False)),
            underline=bool(d.get("underline", False)),
            font_class=d.get("font_class", "sans"),
        )

    @classmethod
    def of_type(cls, attr_type: str | None, font_class: str = "sans") -> "AttributeSet":
        if attr_type in (None, "plain"):
            return cls(font_class=font_class)
        if attr_type not in ATTRIBUTE_TYPES:
            raise ValueError(f"unknown attribute type {attr_type!r}")
        return cls(font_class=font_class, **{attr_type: True})


@dataclass(frozen=True)
class RenderStyle:
    """Global rendering constants shared by the generator and the grader."""

    bold_factor: float = 2.0
    italic_angle_deg: float = 15.0

    @property
    def italic_shear(self) -> float:
        return math.tan(math.radians(self.italic_angle_deg))


@dataclass
class GlyphLayer:
    alpha: np.ndarray  # (rows, cols) float32 in [0, 1]
    baseline_row: int
    advance: int
    cap_row: int = 0
    metrics: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.alpha.shape


def _round(v: float) -> int:
    return int(math.floor(v + 0.5))


@dataclass(frozen=True)
class WordMetrics:
    px_height: int
    glyph_w: int
    thickness: int
    bold_thickness: int
    pitch: int
    slant_pad: int
    bar_rows: int
    cap_row: int
    baseline_row: int
    rows: int

    def advance(self, n_chars: int) -> int:
        return n_chars * self.pitch + self.slant_pad


def word_metrics(px_height: int, font: FontClass, style: RenderStyle = RenderStyle()) -> WordMetrics:
    """Pixel metrics for one (size, font) pair; independent of the style flags."""
    if px_height < MIN_PX_HEIGHT:
        raise RenderSizeError(f"px_height={px_height} is below the minimum of {MIN_PX_HEIGHT}")
    thickness = max(1, _round(px_height * font.stroke_ratio))
    bold_thickness = _round(thickness * style.bold_factor)
    if bold_thickness <= thickness:
        raise RenderSizeError(
            f"px_height={px_height} cannot separate bold ({bold_thickness}px) from plain ({thickness}px) strokes"
        )
    glyph_w = max(3, _round(px_height * font.width_ratio))
    gap = max(1, _round(px_height / 8)) + font.tracking
    cap_row = bold_thickness - 1
    baseline_row = cap_row + px_height - 1
    max_shear = font.base_shear + style.italic_shear
    slant_pad = _round(max_shear * baseline_row)
    bar_rows = max(1, _round(px_height / 12))
    return WordMetrics(
        px_height=px_height,
        glyph_w=glyph_w,
        thickness=thickness,
        bold_thickness=bold_thickness,
        pitch=glyph_w + (bold_thickness - 1) + gap,
        slant_pad=slant_pad,
        bar_rows=bar_rows,
        cap_row=cap_row,
        baseline_row=baseline_row,
        rows=baseline_row + 2 + bar_rows,
    )


def _dilate_up_right(mask: np.ndarray, size: int) -> np.ndarray:
    out = mask.copy()
    rows, cols = mask.shape
    for dy in range(size):
        for dx in range(size):
            if dy == 0 and dx == 0:
                continue
            out[: rows - dy, dx:] |= mask[dy:, : cols - dx]
    return out


def rasterize_word(
    text: str,
    attrs: AttributeSet,
    px_height: int,
    style: RenderStyle = RenderStyle(),
) -> GlyphLayer:
    """Render ``text`` to a binary alpha layer.

    Layer geometry depends only on (text length, size, font class), never on the
    style flags, so bold/italic/underline variants of a word share one box.
    """
    if not text:
        raise ValueError("text must be nonempty")
    for ch in text:
        if ch not in GLYPHS:
            raise UnsupportedCharacterError(f"unsupported character {ch!r} in {text!r}")
    font = FONT_CLASSES[attrs.font_class]
    m = word_metrics(px_height, font, style)
    advance = m.advance(len(text))

    canvas = Image.new("L", (advance, m.rows), 0)
    draw = ImageDraw.Draw(canvas)
    sx = (m.glyph_w - 1) / GRID_W
    sy = (px_height - 1) / GRID_H
    for k, ch in enumerate(text):
        x0 = k * m.pitch
        for stroke in with_serifs(GLYPHS[ch], font.serif):
            pts = [(x0 + _round(gx * sx), m.baseline_row - _round(gy * sy)) for gx, gy in stroke]
            draw.line(pts, fill=255, width=1)
    ink = np.asarray(canvas) > 0

    if attrs.bold:
        ink = _dilate_up_right(ink, m.bold_thickness)
    elif m.thickness > 1:
        ink = _dilate_up_right(ink, m.thickness)
    ink[m.baseline_row + 1 :] = False

    shear = font.base_shear + (style.italic_shear if attrs.italic else 0.0)
    if shear:
        sheared = np.zeros_like(ink)
        for r in range(m.baseline_row + 1):
            s = _round(shear * (m.baseline_row - r))
            if s:
                sheared[r, s:] = ink[r, : advance - s]
            else:
                sheared[r] = ink[r]
        ink = sheared

    if attrs.underline:
        ink[m.baseline_row + 2 : m.baseline_row + 2 + m.bar_rows, :] = True

    return GlyphLayer(
        alpha=ink.astype(np.float32),
        baseline_row=m.baseline_row,
        advance=advance,
        cap_row=m.cap_row,
        metrics={"pitch": m.pitch, "glyph_w": m.glyph_w, "slant_pad": m.slant_pad},
    )
