"""Template-matching OCR over the synthetic glyph alphabet."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..glyphforge.font import ALPHABET, FONT_CLASSES
from ..glyphforge.raster import AttributeSet, RenderStyle, rasterize_word, word_metrics
from .grader import GraderConfig, ink_map


@dataclass(frozen=True)
class OcrConfig:
    px_heights: tuple[int, ...] = (8,)
    font_classes: tuple[str, ...] = ("sans",)
    glyph_threshold: float = 0.7
    alphabet: str = ALPHABET
    style: RenderStyle = RenderStyle()


@dataclass(frozen=True)
class GlyphHit:
    char: str
    x: int
    y: int
    score: float


def batched_ncc(image: np.ndarray, templates: np.ndarray, supports: np.ndarray) -> np.ndarray:
    """Masked NCC of K same-shaped templates at once: (K, th, tw) -> (K, H-th+1, W-tw+1)."""
    _, th, tw = templates.shape
    if th > image.shape[0] or tw > image.shape[1]:
        return np.zeros((0, 0, 0))
    windows = sliding_window_view(image, (th, tw))
    n = supports.sum(axis=(1, 2))
    tmean = (supports * templates).sum(axis=(1, 2)) / n
    tc = supports * (templates - tmean[:, None, None])
    t_norm = np.sqrt((tc**2).sum(axis=(1, 2)))
    wsum = np.einsum("ijkl,nkl->nij", windows, supports)
    wvar = np.einsum("ijkl,nkl->nij", windows**2, supports) - wsum**2 / n[:, None, None]
    num = np.einsum("ijkl,nkl->nij", windows, tc)
    denom = np.sqrt(np.clip(wvar, 0.0, None)) * t_norm[:, None, None]
    out = np.zeros_like(num)
    ok = denom > 1e-9
    out[ok] = num[ok] / denom[ok]
    return out


@lru_cache(maxsize=4096)
def glyph_template(ch: str, attrs: AttributeSet, px: int, style: RenderStyle) -> tuple[np.ndarray, np.ndarray]:
    """Single-glyph alpha plus the slanted one-pitch window it owns inside a word."""
    font = FONT_CLASSES[attrs.font_class]
    m = word_metrics(px, font, style)
    alpha = rasterize_word(ch, attrs, px, style).alpha.astype(np.float64)
    shear = font.base_shear + (style.italic_shear if attrs.italic else 0.0)
    support = np.zeros_like(alpha)
    for r in range(alpha.shape[0]):
        s = int(np.floor(shear * max(m.baseline_row - r, 0) + 0.5))
        support[r, s : s + m.pitch] = 1.0
    alpha.flags.writeable = False
    support.flags.writeable = False
    return alpha, support


def spot_glyphs(ink: np.ndarray, px: int, font_class: str, config: OcrConfig) -> list[GlyphHit]:
    """Best glyph per location over every attribute hypothesis, then greedy non-max suppression."""
    font = FONT_CLASSES[font_class]
    m = word_metrics(px, font, config.style)
    chars, alphas, supports = [], [], []
    for hypo in GraderConfig().hypotheses(font_class):
        for ch in config.alphabet:
            alpha, support = glyph_template(ch, hypo, px, config.style)
            chars.append(ch)
            alphas.append(alpha)
            supports.append(support)
    scores = batched_ncc(ink, np.stack(alphas), np.stack(supports))
    if scores.size == 0:
        return []
    pick = scores.argmax(axis=0)
    best_score = np.take_along_axis(scores, pick[None], axis=0)[0]
    best_char = np.asarray(chars)[pick]
    hits: list[GlyphHit] = []
    ys, xs = np.nonzero(best_score >= config.glyph_threshold)
    order = sorted(zip(ys, xs), key=lambda p: (-best_score[p], p[0], p[1]))
    for y, x in order:
        if any(abs(int(x) - h.x) < m.pitch - 1 and abs(int(y) - h.y) < m.px_height for h in hits):
            continue
        hits.append(GlyphHit(str(best_char[y, x]), int(x), int(y), float(best_score[y, x])))
    return hits


def group_words(hits: list[GlyphHit], pitch: int, line_tol: int = 2) -> list[str]:
    """Chain glyphs on the same line into words; a gap wider than one pitch starts a new word."""
    words = []
    lines: list[list[GlyphHit]] = []
    for h in sorted(hits, key=lambda h: (h.y, h.x)):
        for line in lines:
            if abs(line[0].y - h.y) <= line_tol:
                line.append(h)
                break
        else:
            lines.append([h])
    for line in lines:
        line.sort(key=lambda h: h.x)
        current = line[0].char
        for prev, h in zip(line, line[1:]):
            if h.x - prev.x > pitch + 1:
                words.append(current)
                current = ""
            current += h.char
        words.append(current)
    return words


def recognize(image: np.ndarray, config: OcrConfig = OcrConfig()) -> list[str]:
    """Words read from ``image``, taking the (size, font) reading with the highest total glyph score."""
    ink = ink_map(image)
    best, best_total = [], 0.0
    for font_class in config.font_classes:
        for px in config.px_heights:
            hits = spot_glyphs(ink, px, font_class, config)
            total = sum(h.score for h in hits)
            if total > best_total:
                pitch = word_metrics(px, FONT_CLASSES[font_class], config.style).pitch
                best, best_total = group_words(hits, pitch), total
    return best
