"""Hypothesis re-rendering grader for word-level typography control."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..glyphforge.raster import ATTRIBUTE_TYPES, AttributeSet, RenderStyle, rasterize_word

Word = tuple[str, AttributeSet]


@dataclass(frozen=True)
class GraderConfig:
    px_heights: tuple[int, ...] = (8,)
    attribute_types: tuple[str, ...] = ATTRIBUTE_TYPES
    localization_threshold: float = 0.6
    refine_radius: int = 1
    style: RenderStyle = RenderStyle()

    def hypotheses(self, font_class: str) -> list[AttributeSet]:
        """Every combination of the configured flags, plain first, then by flag count."""
        out = []
        for k in range(len(self.attribute_types) + 1):
            for combo in itertools.combinations(self.attribute_types, k):
                out.append(AttributeSet(font_class=font_class, **{name: True for name in combo}))
        return out


@dataclass
class WordGrade:
    word_identified: bool
    attribute_correct: bool
    matched_attribute: AttributeSet | None
    score: float = 0.0
    position: tuple[int, int] | None = None  # (x, y) of the layer's top-left
    px_height: int | None = None

    def __post_init__(self):
        if self.attribute_correct and not self.word_identified:
            raise ValueError("attribute_correct requires word_identified")

    def to_dict(self) -> dict:
        return {
            "word_identified": self.word_identified,
            "attribute_correct": self.attribute_correct,
            "matched_attribute": self.matched_attribute.to_dict() if self.matched_attribute else None,
            "score": round(float(self.score), 6),
            "position": list(self.position) if self.position else None,
            "px_height": self.px_height,
        }


@dataclass
class SampleGrade:
    words: list[Word]
    grades: list[WordGrade]
    sample_id: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def controlled(self) -> list[int]:
        return [i for i, (_, a) in enumerate(self.words) if not a.is_plain]

    def _has_flag(self, grade: WordGrade, name: str) -> bool:
        return grade.word_identified and grade.matched_attribute is not None and getattr(grade.matched_attribute, name)

    @property
    def type_ok(self) -> bool:
        wanted = {n for i in self.controlled for n in self.words[i][1].active()}
        return bool(wanted) and all(any(self._has_flag(g, n) for g in self.grades) for n in wanted)

    @property
    def word_ok(self) -> bool:
        ctrl = self.controlled
        return bool(ctrl) and all(
            self.grades[i].word_identified
            and self.grades[i].matched_attribute is not None
            and not self.grades[i].matched_attribute.is_plain
            for i in ctrl
        )

    @property
    def total_ok(self) -> bool:
        ctrl = self.controlled
        return bool(ctrl) and all(self.grades[i].attribute_correct for i in ctrl)

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "words": [[t, a.to_dict()] for t, a in self.words],
            "grades": [g.to_dict() for g in self.grades],
            "type_ok": self.type_ok,
            "word_ok": self.word_ok,
            "total_ok": self.total_ok,
            **self.extra,
        }


def ink_map(image: np.ndarray) -> np.ndarray:
    """Absolute luminance deviation from the background estimate (the median pixel)."""
    img = np.asarray(image, dtype=np.float64)
    lum = img.mean(axis=2) if img.ndim == 3 else img
    return np.abs(lum - np.median(lum))


def ncc_map(image: np.ndarray, template: np.ndarray, support: np.ndarray | None = None) -> np.ndarray:
    """Normalized cross-correlation of ``template`` at every valid offset of ``image``.

    ``support`` restricts the comparison to a subset of template pixels.
    """
    th, tw = template.shape
    if th > image.shape[0] or tw > image.shape[1]:
        return np.zeros((0, 0))
    w = np.ones((th, tw)) if support is None else np.asarray(support, dtype=np.float64)
    n = w.sum()
    windows = sliding_window_view(image, (th, tw))
    tc = w * (template - (w * template).sum() / n)
    t_norm = np.sqrt((tc**2).sum())
    wsum = np.einsum("ijkl,kl->ij", windows, w)
    wvar = np.einsum("ijkl,kl->ij", windows**2, w) - wsum**2 / n
    num = np.einsum("ijkl,kl->ij", windows, tc)
    denom = np.sqrt(np.clip(wvar, 0.0, None)) * t_norm
    out = np.zeros_like(num)
    ok = denom > 1e-9
    out[ok] = num[ok] / denom[ok]
    return out


@lru_cache(maxsize=4096)
def render_alpha(text: str, attrs: AttributeSet, px: int, style: RenderStyle) -> np.ndarray:
    alpha = rasterize_word(text, attrs, px, style).alpha.astype(np.float64)
    alpha.flags.writeable = False
    return alpha


def _fit_residual(window: np.ndarray, alpha: np.ndarray) -> float:
    """Squared residual of the best nonnegative scaling of ``alpha`` onto ``window``."""
    aa = float((alpha * alpha).sum())
    gain = max(0.0, float((window * alpha).sum()) / aa) if aa > 0 else 0.0
    return float(((window - gain * alpha) ** 2).sum())


def _localize(ink: np.ndarray, text: str, font_class: str, config: GraderConfig, taken: np.ndarray):
    best = (-np.inf, None, None)
    for px in config.px_heights:
        for hypo in config.hypotheses(font_class):
            alpha = render_alpha(text, hypo, px, config.style)
            scores = ncc_map(ink, alpha)
            if scores.size == 0:
                continue
            rows, cols = alpha.shape
            # Disallow placements overlapping a box already claimed by a better-scoring word.
            claimed = sliding_window_view(taken, (rows, cols)).any(axis=(-2, -1))
            scores = np.where(claimed, -np.inf, scores)
            y, x = np.unravel_index(int(np.argmax(scores)), scores.shape)
            if scores[y, x] > best[0]:
                best = (float(scores[y, x]), (int(x), int(y)), px)
    return best


def _classify(ink: np.ndarray, text: str, font_class: str, pos: tuple[int, int], px: int, config: GraderConfig) -> AttributeSet:
    x0, y0 = pos
    best_resid, best_attr = np.inf, None
    for hypo in config.hypotheses(font_class):
        alpha = render_alpha(text, hypo, px, config.style)
        rows, cols = alpha.shape
        resid = np.inf
        for dy in range(-config.refine_radius, config.refine_radius + 1):
            for dx in range(-config.refine_radius, config.refine_radius + 1):
                x, y = x0 + dx, y0 + dy
                if x < 0 or y < 0 or y + rows > ink.shape[0] or x + cols > ink.shape[1]:
                    continue
                resid = min(resid, _fit_residual(ink[y : y + rows, x : x + cols], alpha))
        # Strict improvement only: ties keep the earlier (fewer-flag) hypothesis.
        if resid < best_resid - 1e-9:
            best_resid, best_attr = resid, hypo
    return best_attr


def grade_sample(image: np.ndarray, words: list[Word], config: GraderConfig = GraderConfig()) -> list[WordGrade]:
    """Localize each word by template correlation, then pick the attribute hypothesis that re-renders best.

    Words are localized greedily in order of confidence; a word may not claim
    a box overlapping one already assigned.
    """
    ink = ink_map(image)
    taken = np.zeros(ink.shape, dtype=bool)
    pending = list(range(len(words)))
    grades: dict[int, WordGrade] = {}
    while pending:
        found = {i: _localize(ink, words[i][0], words[i][1].font_class, config, taken) for i in pending}
        i = max(pending, key=lambda k: (found[k][0], -k))
        score, pos, px = found[i]
        pending.remove(i)
        text, intended = words[i]
        if pos is None or score < config.localization_threshold:
            grades[i] = WordGrade(False, False, None, score=max(score, -1.0) if np.isfinite(score) else -1.0)
            continue
        matched = _classify(ink, text, intended.font_class, pos, px, config)
        rows, cols = render_alpha(text, matched, px, config.style).shape
        taken[pos[1] : pos[1] + rows, pos[0] : pos[0] + cols] = True
        grades[i] = WordGrade(True, matched == intended, matched, score=score, position=pos, px_height=px)
    return [grades[i] for i in range(len(words))]
