"""Synthetic word-level typography dataset: rasterizer, compositor, builder, validator."""

from .compose import (
    BackgroundSpec,
    Layout,
    LayoutOverflowError,
    LayoutPolicy,
    StyledSample,
    compose_sample,
    sample_layout,
)
from .dataset import (
    DatasetConfig,
    DatasetError,
    DatasetManifest,
    build_dataset,
    load_image,
    load_manifest,
    load_sample,
    record_words,
)
from .font import ALPHABET, FONT_CLASSES
from .raster import (
    ATTRIBUTE_TYPES,
    AttributeSet,
    GlyphLayer,
    RenderSizeError,
    RenderStyle,
    UnsupportedCharacterError,
    rasterize_word,
    word_metrics,
)
from .validate import ValidationReport, validate_masks

__all__ = [
    "ALPHABET",
    "ATTRIBUTE_TYPES",
    "AttributeSet",
    "BackgroundSpec",
    "DatasetConfig",
    "DatasetError",
    "DatasetManifest",
    "FONT_CLASSES",
    "GlyphLayer",
    "Layout",
    "LayoutOverflowError",
    "LayoutPolicy",
    "RenderSizeError",
    "RenderStyle",
    "StyledSample",
    "UnsupportedCharacterError",
    "ValidationReport",
    "build_dataset",
    "compose_sample",
    "load_image",
    "load_manifest",
    "load_sample",
    "rasterize_word",
    "record_words",
    "sample_layout",
    "validate_masks",
    "word_metrics",
]
