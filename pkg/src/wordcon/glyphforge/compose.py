"""Scene composition: procedural backgrounds, single-line layout, alpha compositing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .font import FONT_CLASSES
from .raster import AttributeSet, GlyphLayer, RenderStyle, rasterize_word, word_metrics

Word = tuple[str, AttributeSet]


class LayoutOverflowError(ValueError):
    def __init__(self, required: int, available: int, px_height: int):
        super().__init__(
            f"layout overflow: words need {required}px at px_height={px_height} but only {available}px are available"
        )
        self.required = required
        self.available = available
        self.px_height = px_height


@dataclass(frozen=True)
class BackgroundSpec:
    """Procedural background.

    ``kind`` is one of solid / gradient / noise. ``contrast`` is the minimum
    luminance gap between text and every background pixel. ``level`` and
    ``dark_text`` pin the background level and polarity; None samples them.
    """

    kind: str = "solid"
    contrast: float = 1.0
    level: float | None = None
    dark_text: bool | None = None
    tint: float = 0.0  # max per-channel colour offset
    noise_cells: int = 4

    def __post_init__(self):
        if self.kind not in ("solid", "gradient", "noise"):
            raise ValueError(f"unknown background kind {self.kind!r}")
        if not 0.3 <= self.contrast <= 1.0:
            raise ValueError(f"contrast must lie in [0.3, 1.0], got {self.contrast}")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class LayoutPolicy:
    """Single-line layout bounds. Scale and horizontal origin are uniform within bounds."""

    px_height_min: int = 8
    px_height_max: int = 8
    word_gap: int = 2
    margin: int = 0
    x_jitter: bool = True
    y_jitter: int = 0  # max vertical offset from centred, in px

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class Layout:
    px_height: int
    origins: list[tuple[int, int]]  # (x, y) of each word's layer top-left
    boxes: list[tuple[int, int, int, int]]  # (x0, y0, x1, y1), exclusive ends

    def to_dict(self) -> dict:
        return {"px_height": self.px_height, "origins": [list(o) for o in self.origins], "boxes": [list(b) for b in self.boxes]}

    @classmethod
    def from_dict(cls, d: dict) -> "Layout":
        return cls(d["px_height"], [tuple(o) for o in d["origins"]], [tuple(b) for b in d["boxes"]])


@dataclass
class StyledSample:
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    words: list[Word]
    pixel_masks: list[np.ndarray]  # (H, W) bool per word
    layout: Layout
    seed: int
    text_color: tuple[float, float, float] = (0.0, 0.0, 0.0)
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> tuple[int, int]:
        return self.image.shape[:2]


def line_width(words: list[Word], px_height: int, word_gap: int, style: RenderStyle = RenderStyle()) -> int:
    total = 0
    for text, attrs in words:
        total += word_metrics(px_height, FONT_CLASSES[attrs.font_class], style).advance(len(text))
    return total + word_gap * (len(words) - 1)


def line_rows(words: list[Word], px_height: int, style: RenderStyle = RenderStyle()) -> int:
    return max(word_metrics(px_height, FONT_CLASSES[a.font_class], style).rows for _, a in words)


def sample_layout(
    words: list[Word],
    policy: LayoutPolicy,
    image_size: tuple[int, int],
    rng: np.random.Generator,
    style: RenderStyle = RenderStyle(),
) -> Layout:
    if not words:
        raise ValueError("at least one word is required")
    height, width = image_size
    px_height = int(rng.integers(policy.px_height_min, policy.px_height_max + 1))
    required = line_width(words, px_height, policy.word_gap, style)
    available = width - 2 * policy.margin
    if required > available:
        raise LayoutOverflowError(required, available, px_height)
    slack = available - required
    x = policy.margin + (int(rng.integers(0, slack + 1)) if policy.x_jitter else slack // 2)
    rows = line_rows(words, px_height, style)
    if rows > height:
        raise LayoutOverflowError(rows, height, px_height)
    y_centre = (height - rows) // 2
    y_lo = max(0, y_centre - policy.y_jitter)
    y_hi = min(height - rows, y_centre + policy.y_jitter)
    y = int(rng.integers(y_lo, y_hi + 1)) if y_hi > y_lo else y_centre

    origins, boxes = [], []
    for text, attrs in words:
        m = word_metrics(px_height, FONT_CLASSES[attrs.font_class], style)
        adv = m.advance(len(text))
        origins.append((x, y))
        boxes.append((x, y, x + adv, y + m.rows))
        x += adv + policy.word_gap
    return Layout(px_height, origins, boxes)


def _smooth_noise(rng: np.random.Generator, height: int, width: int, cells: int) -> np.ndarray:
    """Band-limited noise in [0, 1]: bilinear upsampling of a coarse random grid."""
    coarse = rng.random((cells + 1, cells + 1))
    ys = np.linspace(0, cells, height)
    xs = np.linspace(0, cells, width)
    y0 = np.minimum(np.floor(ys).astype(int), cells - 1)
    x0 = np.minimum(np.floor(xs).astype(int), cells - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    c00 = coarse[np.ix_(y0, x0)]
    c01 = coarse[np.ix_(y0, x0 + 1)]
    c10 = coarse[np.ix_(y0 + 1, x0)]
    c11 = coarse[np.ix_(y0 + 1, x0 + 1)]
    out = c00 * (1 - fy) * (1 - fx) + c01 * (1 - fy) * fx + c10 * fy * (1 - fx) + c11 * fy * fx
    lo, hi = out.min(), out.max()
    return (out - lo) / (hi - lo) if hi > lo else np.zeros_like(out)


def render_background(
    spec: BackgroundSpec, image_size: tuple[int, int], rng: np.random.Generator
) -> tuple[np.ndarray, tuple[float, float, float]]:
    """Return (background (H, W, 3), text colour) with |text - bg| >= contrast everywhere."""
    height, width = image_size
    dark_text = bool(rng.integers(0, 2)) if spec.dark_text is None else spec.dark_text
    room = 1.0 - spec.contrast
    # Background luminance lives in a band of width `room` on the far side from the text.
    if dark_text:
        text_level = float(rng.uniform(0.0, room)) if spec.level is None else max(0.0, spec.level - spec.contrast)
        lo, hi = text_level + spec.contrast, 1.0
    else:
        text_level = float(rng.uniform(spec.contrast, 1.0)) if spec.level is None else min(1.0, spec.level + spec.contrast)
        lo, hi = 0.0, text_level - spec.contrast
    base = float(rng.uniform(lo, hi)) if spec.level is None else float(np.clip(spec.level, lo, hi))

    if spec.kind == "solid":
        lum = np.full((height, width), base)
    elif spec.kind == "gradient":
        other = float(rng.uniform(lo, hi))
        angle = rng.uniform(0, 2 * np.pi)
        yy, xx = np.mgrid[0:height, 0:width]
        proj = np.cos(angle) * xx / max(width - 1, 1) + np.sin(angle) * yy / max(height - 1, 1)
        proj = (proj - proj.min()) / max(proj.max() - proj.min(), 1e-9)
        lum = base + (other - base) * proj
    else:
        lum = lo + (hi - lo) * _smooth_noise(rng, height, width, spec.noise_cells)

    bg = np.repeat(lum[:, :, None], 3, axis=2)
    if spec.tint > 0:
        # Tint only within the band so contrast is preserved per channel.
        offset = rng.uniform(-spec.tint, spec.tint, size=3)
        bg = np.clip(bg + offset, lo, hi)
    color = (text_level, text_level, text_level)
    return bg.astype(np.float32), color


def place_layer(layer: GlyphLayer, origin: tuple[int, int], image_size: tuple[int, int]) -> np.ndarray:
    height, width = image_size
    x, y = origin
    rows, cols = layer.alpha.shape
    if x < 0 or y < 0 or x + cols > width or y + rows > height:
        raise LayoutOverflowError(max(x + cols, y + rows), min(width, height), -1)
    full = np.zeros((height, width), dtype=np.float32)
    full[y : y + rows, x : x + cols] = layer.alpha
    return full


def compose_sample(
    words: list[Word],
    background: BackgroundSpec = BackgroundSpec(),
    policy: LayoutPolicy = LayoutPolicy(),
    seed: int = 0,
    image_size: tuple[int, int] = (32, 32),
    layout: Layout | None = None,
    style: RenderStyle = RenderStyle(),
) -> StyledSample:
    """Paste rendered words left-to-right onto a procedural background.

    Layout is drawn first from ``seed`` (unless given explicitly), then the
    background, so a fixed layout with different seeds only changes the scene.
    """
    rng = np.random.default_rng(seed)
    if layout is None:
        layout = sample_layout(words, policy, image_size, rng, style)
    bg_rng = np.random.default_rng([seed, 1])
    image, color = render_background(background, image_size, bg_rng)

    masks = []
    for (text, attrs), origin in zip(words, layout.origins):
        layer = rasterize_word(text, attrs, layout.px_height, style)
        alpha = place_layer(layer, origin, image_size)
        image = image * (1.0 - alpha[:, :, None]) + np.asarray(color, dtype=np.float32) * alpha[:, :, None]
        masks.append(alpha > 0)
    return StyledSample(
        image=np.clip(image, 0.0, 1.0).astype(np.float32),
        words=list(words),
        pixel_masks=masks,
        layout=layout,
        seed=seed,
        text_color=color,
    )
