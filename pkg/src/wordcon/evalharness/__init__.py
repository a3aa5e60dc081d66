"""Deterministic grading: attribute re-rendering grader, template OCR, attention alignment, benchmark."""

from .benchmark import (
    BenchmarkConfig,
    BenchmarkReport,
    attention_iou,
    condition_seed,
    generate,
    grade_images,
    probe_attention,
    run_benchmark,
)
from .grader import GraderConfig, SampleGrade, WordGrade, grade_sample, ink_map, ncc_map
from .metrics import accuracy_metrics, attention_alignment, ocr_metrics, precision_recall
from .ocr import OcrConfig, recognize

__all__ = [
    "BenchmarkConfig",
    "BenchmarkReport",
    "GraderConfig",
    "OcrConfig",
    "SampleGrade",
    "WordGrade",
    "accuracy_metrics",
    "attention_alignment",
    "attention_iou",
    "condition_seed",
    "generate",
    "grade_images",
    "grade_sample",
    "ink_map",
    "ncc_map",
    "ocr_metrics",
    "precision_recall",
    "probe_attention",
    "recognize",
    "run_benchmark",
]
