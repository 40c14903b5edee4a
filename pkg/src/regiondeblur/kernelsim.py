"""Kernel similarity scoring and threshold labeling.

Similarity is the maximum normalized cross-correlation over all integer 2-D
shifts: the best overlap sum divided by the product of the L2 norms. Per-shift
sums use math.fsum, which is correctly rounded, so identical kernels score
exactly 1.0 and the score is exactly invariant to translating either kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .imagecore import Kernel


@dataclass(frozen=True)
class SimilarityScore:
    value: float

    def __post_init__(self):
        if not (0.0 <= self.value <= 1.0):
            raise ValidationError(f"similarity must lie in [0, 1], got {self.value!r}")


@dataclass(frozen=True)
class LabelConfig:
    """A patch is a positive example when similarity >= threshold."""

    threshold: float = 0.75

    def __post_init__(self):
        if not (0.0 < self.threshold < 1.0):
            raise ValidationError(f"threshold must lie in (0, 1), got {self.threshold!r}")


def _weights_of(k) -> np.ndarray:
    arr = k.weights if isinstance(k, Kernel) else np.asarray(k, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ValidationError(f"kernel weights must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("kernel weights contain non-finite values")
    if np.any(arr < 0):
        raise ValidationError("kernel weights must be non-negative")
    return np.ascontiguousarray(arr, dtype=np.float64)


def _exact_sum(values: np.ndarray) -> float:
    nz = values[values != 0.0]
    return math.fsum(nz.tolist())


def kernel_similarity(k_est, k_true) -> SimilarityScore:
    """Best-aligned normalized cross-correlation of two kernels.

    Accepts Kernel values or raw non-negative 2-D arrays; the score ignores
    positive rescaling of either argument. Raises ValidationError when either
    kernel has no mass.
    """
    a = _weights_of(k_est)
    b = _weights_of(k_true)
    sq_a = _exact_sum(a * a)
    sq_b = _exact_sum(b * b)
    if sq_a == 0.0 or sq_b == 0.0:
        raise ValidationError("cannot score an all-zero kernel")
    # Canonical operand order makes the score exactly symmetric.
    if (b.shape, b.tobytes()) < (a.shape, a.tobytes()):
        a, b = b, a
        sq_a, sq_b = sq_b, sq_a
    ha, wa = a.shape
    hb, wb = b.shape
    canvas = np.zeros((hb + 2 * (ha - 1), wb + 2 * (wa - 1)))
    canvas[ha - 1:ha - 1 + hb, wa - 1:wa - 1 + wb] = b
    best = 0.0
    for i in range(hb + ha - 1):
        for j in range(wb + wa - 1):
            s = _exact_sum(a * canvas[i:i + ha, j:j + wa])
            if s > best:
                best = s
    value = best / math.sqrt(sq_a * sq_b)
    return SimilarityScore(min(1.0, value))


def label(similarity, config: LabelConfig = LabelConfig()) -> int:
    """1 when the similarity clears the threshold (inclusive), else 0."""
    value = similarity.value if isinstance(similarity, SimilarityScore) else float(similarity)
    if not (0.0 <= value <= 1.0):
        raise ValidationError(f"similarity must lie in [0, 1], got {value!r}")
    return int(value >= config.threshold)
