"""Instance- and image-level uncertainty scores.

All entropies are in nats. Each score carries an orientation so callers can
rank "most uncertain first" without special-casing the margin, which shrinks
with uncertainty while the entropies grow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .core import ImagePrediction, InstancePrediction

LOWER_IS_UNCERTAIN = "lower_is_uncertain"
HIGHER_IS_UNCERTAIN = "higher_is_uncertain"

# Mask probabilities are clamped away from {0, 1} before taking logs; the
# resulting error stays far below every tolerance in the test suite.
LOG_EPS = 1e-12


@dataclass(frozen=True)
class UncertaintyScore:
    value: float
    orientation: str

    def rank_key(self) -> float:
        """Sort key under which ascending order means most uncertain first."""
        return self.value if self.orientation == LOWER_IS_UNCERTAIN else -self.value


def _check_probs(class_probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(class_probs, dtype=np.float64)
    if probs.ndim != 1 or probs.size == 0:
        raise ValueError("class_probs must be a non-empty vector")
    return probs


def top_two_classes(class_probs) -> tuple[int, int]:
    """Indices of the two largest probabilities, ties resolved to lower index."""
    probs = _check_probs(class_probs)
    if probs.size < 2:
        raise ValueError("at least two classes are required")
    order = np.argsort(-probs, kind="stable")
    return int(order[0]), int(order[1])


def winning_class(class_probs) -> int:
    """Index of the largest probability, ties resolved to lower index."""
    return int(np.argmax(_check_probs(class_probs)))


def classification_margin(class_probs) -> UncertaintyScore:
    """Gap between the two largest class probabilities; small means uncertain."""
    probs = _check_probs(class_probs)
    c1, c2 = top_two_classes(probs)
    return UncertaintyScore(float(probs[c1] - probs[c2]), LOWER_IS_UNCERTAIN)


def classification_entropy(class_probs) -> UncertaintyScore:
    """Shannon entropy of the class distribution, with 0 log 0 = 0."""
    probs = _check_probs(class_probs)
    nonzero = probs[probs > 0]
    value = -float(np.sum(nonzero * np.log(nonzero)))
    return UncertaintyScore(max(value, 0.0), HIGHER_IS_UNCERTAIN)


def mean_binary_entropy(values) -> float:
    """Mean per-pixel binary entropy of a probability grid."""
    grid = np.asarray(values, dtype=np.float64).reshape(-1)
    if grid.size == 0:
        raise ValueError("empty mask")
    p = np.clip(grid, LOG_EPS, 1.0 - LOG_EPS)
    per_pixel = -(p * np.log(p) + (1.0 - p) * np.log(1.0 - p))
    return float(per_pixel.mean())


def segmentation_entropy(mask_values) -> UncertaintyScore:
    """Mean binary entropy of the winning-class sigmoid mask."""
    return UncertaintyScore(mean_binary_entropy(mask_values), HIGHER_IS_UNCERTAIN)


def instance_seg_entropy(inst: InstancePrediction) -> float:
    """Segmentation entropy of one instance; a dense mask wins over the stored value."""
    if inst.mask is not None:
        return mean_binary_entropy(inst.mask.values)
    if inst.seg_entropy is None:
        raise ValueError(f"instance {inst.instance_id!r} has no mask or seg_entropy")
    return float(inst.seg_entropy)


def instance_uncertainty(inst: InstancePrediction, metric: str) -> UncertaintyScore:
    """Dispatch one of the instance-level metrics: se, ce, or cm."""
    if metric == "se":
        return UncertaintyScore(instance_seg_entropy(inst), HIGHER_IS_UNCERTAIN)
    if metric == "ce":
        return classification_entropy(inst.class_probs)
    if metric == "cm":
        return classification_margin(inst.class_probs)
    raise ValueError(f"unknown instance metric {metric!r}")


def weighted_classification_entropy(image: ImagePrediction) -> UncertaintyScore:
    """Sum over instances of size_ratio times classification entropy."""
    value = math.fsum(
        inst.size_ratio * classification_entropy(inst.class_probs).value
        for inst in image.instances)
    return UncertaintyScore(value, HIGHER_IS_UNCERTAIN)


def weighted_segmentation_entropy(image: ImagePrediction) -> UncertaintyScore:
    """Sum over instances of size_ratio times segmentation entropy."""
    value = math.fsum(
        inst.size_ratio * instance_seg_entropy(inst) for inst in image.instances)
    return UncertaintyScore(value, HIGHER_IS_UNCERTAIN)


def average_classification_margin(image: ImagePrediction) -> UncertaintyScore:
    """Mean instance margin; an empty image scores a maximally confident 1."""
    if not image.instances:
        return UncertaintyScore(1.0, LOWER_IS_UNCERTAIN)
    value = math.fsum(
        classification_margin(inst.class_probs).value
        for inst in image.instances) / len(image.instances)
    return UncertaintyScore(value, LOWER_IS_UNCERTAIN)


def class_conditional_wse(image: ImagePrediction, class_k: int) -> UncertaintyScore:
    """Weighted segmentation entropy restricted to instances won by ``class_k``."""
    if class_k < 0:
        raise ValueError(f"class index {class_k} out of range")
    if image.instances and class_k >= image.instances[0].class_probs.size:
        raise ValueError(
            f"class index {class_k} out of range for "
            f"{image.instances[0].class_probs.size} classes")
    value = math.fsum(
        inst.size_ratio * instance_seg_entropy(inst)
        for inst in image.instances if winning_class(inst.class_probs) == class_k)
    return UncertaintyScore(value, HIGHER_IS_UNCERTAIN)
