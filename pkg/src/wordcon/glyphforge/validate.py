from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .compose import LayoutOverflowError, StyledSample, place_layer
from .raster import RenderStyle, rasterize_word


@dataclass
class ValidationReport:
    footprint_mismatch: list[int] = field(default_factory=list)  # per word, pixels differing
    overlaps: list[tuple[int, int, int]] = field(default_factory=list)  # (i, j, shared pixels)
    out_of_bounds: list[int] = field(default_factory=list)  # word indices
    count_mismatch: bool = False

    @property
    def ok(self) -> bool:
        return (
            not self.count_mismatch
            and not any(self.footprint_mismatch)
            and not self.overlaps
            and not self.out_of_bounds
        )

    def summary(self) -> str:
        if self.ok:
            return "ok"
        parts = []
        if self.count_mismatch:
            parts.append("mask count != word count")
        bad = [i for i, n in enumerate(self.footprint_mismatch) if n]
        if bad:
            parts.append(f"footprint mismatch in words {bad}")
        if self.overlaps:
            parts.append(f"overlapping masks {[(i, j) for i, j, _ in self.overlaps]}")
        if self.out_of_bounds:
            parts.append(f"out-of-bounds words {self.out_of_bounds}")
        return "; ".join(parts)


def validate_masks(sample: StyledSample, style: RenderStyle = RenderStyle()) -> ValidationReport:
    """Re-render every word from the recorded layout and check the stored masks against it."""
    report = ValidationReport()
    size = sample.size
    if len(sample.pixel_masks) != len(sample.words) or len(sample.layout.origins) != len(sample.words):
        report.count_mismatch = True
        return report

    for i, ((text, attrs), origin, mask) in enumerate(zip(sample.words, sample.layout.origins, sample.pixel_masks)):
        if mask.shape != size:
            report.out_of_bounds.append(i)
            report.footprint_mismatch.append(int(mask.size))
            continue
        layer = rasterize_word(text, attrs, sample.layout.px_height, style)
        try:
            footprint = place_layer(layer, origin, size) > 0
        except LayoutOverflowError:
            report.out_of_bounds.append(i)
            report.footprint_mismatch.append(int(mask.sum()))
            continue
        report.footprint_mismatch.append(int(np.count_nonzero(footprint != mask.astype(bool))))

    masks = [m.astype(bool) for m in sample.pixel_masks if m.shape == size]
    for i in range(len(masks)):
        for j in range(i + 1, len(masks)):
            shared = int(np.count_nonzero(masks[i] & masks[j]))
            if shared:
                report.overlaps.append((i, j, shared))
    return report
