#!/usr/bin/env python3
"""
Loss Component - relationship losses for imbalanced multi-label prediction

All losses use the negative-log convention so they are non-negative, and clamp
probabilities to [1e-7, 1 - 1e-7] before any logarithm.

    focal:  y=1 -> (1-p)^g * -log p          y=0 -> p^g * -log(1-p)
    ar:     y=1 -> w_n * (1-p)^g+ * -log p   y=0 -> p^g- * -log(1-p)
            with w_n = (1 - beta) / (1 - beta^n) from the class's positive count n
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from components.autodiff import (
    PROB_EPS, Tensor, as_tensor, clip, gather, log, log_prob, mul, power, relu,
    softmax, tensor_mean, tensor_sum,
)
from components.errors import ContractError, ShapeError

LOSS_KINDS = ("bce", "focal", "mlm", "ar")


@dataclass
class LossConfig:
    """
    Relationship loss selection and hyperparameters

    class_counts holds the positive-annotation count of every predicate class in
    the training split; it is filled in from the data before training.
    """

    kind: str = "ar"
    gamma: float = 2.0
    gamma_pos: float = 1.0
    gamma_neg: float = 4.0
    beta: float = 0.9999
    use_class_weight: bool = True
    margin: float = 1.0
    class_counts: List[int] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ContractError(f"unknown loss kind '{self.kind}' (expected one of {LOSS_KINDS})")
        if self.gamma < 0 or self.gamma_pos < 0 or self.gamma_neg < 0:
            raise ContractError("focusing parameters must be >= 0")
        if self.kind == "ar" and self.gamma_neg < self.gamma_pos:
            raise ContractError(f"gamma_neg ({self.gamma_neg}) must be >= gamma_pos "
                                f"({self.gamma_pos})")
        if not (0.0 <= self.beta < 1.0):
            raise ContractError(f"beta must lie in [0, 1), got {self.beta}")
        if self.margin <= 0:
            raise ContractError(f"margin must be positive, got {self.margin}")
        self.class_counts = [int(c) for c in self.class_counts]


def _clamped(p) -> Tensor:
    return clip(as_tensor(p), PROB_EPS, 1.0 - PROB_EPS)


def _targets(y, p: Tensor) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape != p.shape:
        raise ShapeError("loss targets", p.shape, y.shape)
    return y


def effective_number_weight(n: int, beta: float) -> float:
    """
    Class-balanced weight (1 - beta) / (1 - beta^n)

    Raises:
        ContractError: If beta is outside [0, 1) or n < 1
    """
    if not (0.0 <= beta < 1.0):
        raise ContractError(f"beta must lie in [0, 1), got {beta}")
    if n < 1:
        raise ContractError(f"sample count must be >= 1, got {n}")
    return (1.0 - beta) / (1.0 - beta ** int(n))


def class_weights(config: LossConfig, num_classes: int) -> np.ndarray:
    """Per-class positive weights for the AR loss (all ones when weighting is off)"""
    if not config.use_class_weight:
        return np.ones(num_classes)
    if len(config.class_counts) != num_classes:
        raise ContractError(f"loss has {len(config.class_counts)} class counts for "
                            f"{num_classes} predicate classes")
    return np.array([effective_number_weight(max(n, 1), config.beta) for n in config.class_counts])


def bce_loss(p, y) -> Tensor:
    """Summed binary cross-entropy"""
    q = _clamped(p)
    y = _targets(y, q)
    pos = mul(log(q), y)
    neg = mul(log(1.0 - q), 1.0 - y)
    return tensor_sum(pos + neg) * -1.0


def focal_loss(p, y, gamma: float) -> Tensor:
    """
    Summed focal loss

    Raises:
        ContractError: If gamma < 0
    """
    if gamma < 0:
        raise ContractError(f"gamma must be >= 0, got {gamma}")
    q = _clamped(p)
    y = _targets(y, q)
    pos = mul(power(1.0 - q, gamma) * log(q), y)
    neg = mul(power(q, gamma) * log(1.0 - q), 1.0 - y)
    return tensor_sum(pos + neg) * -1.0


def ar_loss(p, y, config: LossConfig, weights: Optional[np.ndarray] = None) -> Tensor:
    """
    Summed asymmetrical reweighting loss

    Args:
        p: predicate scores, (P,) or (pairs, P)
        y: multi-hot targets shaped like p
        config (LossConfig): gamma_pos, gamma_neg, beta, class counts
        weights (np.ndarray, optional): precomputed per-class weights

    Raises:
        ContractError: If gamma_neg < gamma_pos
    """
    if config.gamma_neg < config.gamma_pos:
        raise ContractError(f"gamma_neg ({config.gamma_neg}) must be >= gamma_pos "
                            f"({config.gamma_pos})")
    q = _clamped(p)
    y = _targets(y, q)
    if weights is None:
        weights = class_weights(config, q.shape[-1])
    pos = mul(power(1.0 - q, config.gamma_pos) * log(q), y * weights)
    neg = mul(power(q, config.gamma_neg) * log(1.0 - q), 1.0 - y)
    return tensor_sum(pos + neg) * -1.0


def mlm_margin_loss(scores, positives: Sequence[int], negatives: Sequence[int],
                    margin: float = 1.0) -> Tensor:
    """
    Multi-label margin loss: mean over (positive, negative) class pairs of
    max(0, margin - s_pos + s_neg); 0 when either side is empty
    """
    if margin <= 0:
        raise ContractError(f"margin must be positive, got {margin}")
    scores = as_tensor(scores)
    positives, negatives = list(positives), list(negatives)
    if not positives or not negatives:
        return tensor_sum(scores) * 0.0
    pos_idx = np.repeat(positives, len(negatives))
    neg_idx = np.tile(negatives, len(positives))
    hinge = relu(gather(scores, neg_idx) - gather(scores, pos_idx) + margin)
    return tensor_mean(hinge)


def relationship_loss(p: Tensor, y, config: LossConfig,
                      weights: Optional[np.ndarray] = None) -> Tensor:
    """Mean over pairs of the configured per-pair loss; p and y are (pairs, P)"""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != p.shape or p.data.ndim != 2:
        raise ShapeError("relationship_loss", p.shape, y.shape)
    pairs = p.shape[0]
    if config.kind == "bce":
        return bce_loss(p, y) * (1.0 / pairs)
    if config.kind == "focal":
        return focal_loss(p, y, config.gamma) * (1.0 / pairs)
    if config.kind == "ar":
        return ar_loss(p, y, config, weights) * (1.0 / pairs)
    terms = []
    for row in range(pairs):
        positives = np.flatnonzero(y[row] > 0.5)
        negatives = np.flatnonzero(y[row] <= 0.5)
        terms.append(mlm_margin_loss(gather(p, [row]).reshape((p.shape[1],)),
                                     positives, negatives, config.margin))
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total * (1.0 / pairs)


def object_cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean softmax cross-entropy over objects"""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("object_cross_entropy", logits.shape, labels.shape)
    onehot = np.zeros(logits.shape)
    onehot[np.arange(labels.size), labels] = 1.0
    probs = softmax(logits, axis=1)
    return tensor_sum(mul(log_prob(probs), onehot)) * (-1.0 / labels.size)


def total_loss(object_logits: Optional[Tensor], object_labels, predicate_scores: Optional[Tensor],
               predicate_targets, config: LossConfig,
               weights: Optional[np.ndarray] = None) -> Tensor:
    """
    Object cross-entropy plus the relationship loss

    object_logits may be None (ground-truth classes given), in which case the
    object term is 0; an empty pair set leaves only the object term.
    """
    terms = []
    if object_logits is not None:
        terms.append(object_cross_entropy(object_logits, object_labels))
    if predicate_scores is not None and predicate_scores.shape[0] > 0:
        terms.append(relationship_loss(predicate_scores, predicate_targets, config, weights))
    if not terms:
        return Tensor(0.0)
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total
