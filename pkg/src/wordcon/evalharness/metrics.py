"""Aggregate accuracy, OCR and attention-alignment metrics."""

from __future__ import annotations

from collections import Counter
from typing import Iterable, Sequence

import numpy as np

from .grader import SampleGrade


def accuracy_metrics(grades: Sequence[SampleGrade]) -> tuple[float, float, float]:
    """(type_acc, word_acc, total_acc) as percentages over samples with at least one controlled word."""
    graded = [g for g in grades if g.controlled]
    if not graded:
        raise ValueError("accuracy_metrics needs at least one sample with a controlled word")
    n = len(graded)
    type_acc = 100.0 * sum(g.type_ok for g in graded) / n
    word_acc = 100.0 * sum(g.word_ok for g in graded) / n
    total_acc = 100.0 * sum(g.total_ok for g in graded) / n
    return type_acc, word_acc, total_acc


def ocr_counts(recognized: Iterable[str], expected: Iterable[str]) -> tuple[int, int, int]:
    """(matches, |recognized|, |expected|) with multiset intersection."""
    rec, exp = Counter(recognized), Counter(expected)
    if not exp:
        raise ValueError("expected word set is empty")
    return sum((rec & exp).values()), sum(rec.values()), sum(exp.values())


def precision_recall(matches: int, n_recognized: int, n_expected: int) -> tuple[float, float]:
    precision = 100.0 * matches / n_recognized if n_recognized else 0.0
    recall = 100.0 * matches / n_expected
    return precision, recall


def ocr_metrics(image: np.ndarray, expected: Sequence[str], config=None) -> tuple[float, float]:
    """Precision and recall (percent) of the words read from ``image`` against ``expected``."""
    from .ocr import OcrConfig, recognize

    if not expected:
        raise ValueError("expected word set is empty")
    recognized = recognize(image, config or OcrConfig())
    return precision_recall(*ocr_counts(recognized, expected))


def attention_alignment(attn_map, mask, threshold: float = 0.5) -> float:
    """IoU of the thresholded map against a binary mask; two empty sets count as perfect agreement."""
    a = np.asarray(attn_map, dtype=np.float64)
    m = np.asarray(mask).astype(bool)
    if a.shape != m.shape:
        raise ValueError(f"shape mismatch: map {a.shape} vs mask {m.shape}")
    b = a >= threshold
    union = np.logical_or(b, m).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(b, m).sum() / union)
