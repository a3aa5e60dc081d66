"""Word-mask providers feeding the masked and joint-attention losses.

Two interchangeable providers return :class:`~wordcon.losses.MaskSet`:

* ``oracle_masks`` takes the exact footprints the dataset generator recorded.
* ``import_masks`` reads externally produced segmentation PNGs laid out as
  ``<mask_dir>/<sample_id>.word<i>.png`` (one file per word, any 8-bit
  grayscale; pixels >= 128 count as text).
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .glyphforge.compose import StyledSample
from .glyphforge.validate import validate_masks
from .losses import MaskSet, downsample_mask

BINARIZE_THRESHOLD = 128


class MaskValidationError(ValueError):
    pass


class MissingMaskError(FileNotFoundError):
    pass


class NonBinaryMaskError(ValueError):
    pass


@dataclass(frozen=True)
class MaskQuery:
    sample_id: str
    word_index: int
    word_text: str


def oracle_masks(sample: StyledSample, patch_size: int) -> MaskSet:
    report = validate_masks(sample)
    if not report.ok:
        raise MaskValidationError(f"sample {sample.meta.get('sample_id', '?')}: {report.summary()}")
    return MaskSet(np.stack([downsample_mask(m, patch_size) for m in sample.pixel_masks]))


def mask_path(mask_dir: str | os.PathLike, sample_id: str, word_index: int) -> Path:
    return Path(mask_dir) / f"{sample_id}.word{word_index}.png"


def import_masks(
    mask_dir: str | os.PathLike,
    sample_id: str,
    patch_size: int,
    num_words: int,
    max_gray_fraction: float = 0.5,
) -> MaskSet:
    """Load one grounding mask per word, binarize at 128, pool to the latent grid.

    Masks whose ink pixels are mostly mid-gray (neither near 0 nor near 255)
    are rejected: they are soft probability maps, not segmentations.
    """
    grids = []
    for i in range(num_words):
        path = mask_path(mask_dir, sample_id, i)
        if not path.exists():
            raise MissingMaskError(f"missing mask for word {i} of {sample_id}: {path}")
        with Image.open(path) as im:
            values = np.asarray(im.convert("L"))
        nonzero = values > 0
        gray = (values >= 32) & (values <= 223)
        if nonzero.any() and gray.sum() > max_gray_fraction * nonzero.sum():
            raise NonBinaryMaskError(
                f"{path}: {int(gray.sum())} of {int(nonzero.sum())} nonzero pixels are mid-gray; expected a binary mask"
            )
        grids.append(downsample_mask(values >= BINARIZE_THRESHOLD, patch_size))
    return MaskSet(np.stack(grids))


def export_masks(sample: StyledSample, mask_dir: str | os.PathLike, sample_id: str) -> list[Path]:
    out = []
    Path(mask_dir).mkdir(parents=True, exist_ok=True)
    for i, m in enumerate(sample.pixel_masks):
        path = mask_path(mask_dir, sample_id, i)
        Image.fromarray(m.astype(np.uint8) * 255).save(path, format="PNG")
        out.append(path)
    return out
