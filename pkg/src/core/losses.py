"""
Losses and Evaluation Metrics

Losses return (value, gradient) pairs so the training loop can chain them
straight into the network's backward pass:

- corr_loss: 1 - Pearson r over one whole sequence
- mse: mean squared error
- corr_plus_mse: corr_loss + weight * mse
- cross_entropy: -log posterior[label], gradient taken w.r.t. the logits

Metrics: pearson_r (population normalization), confusion matrices and UAR.
All math is float64.
"""

import logging
from typing import Sequence, Tuple

import numpy as np
from sklearn.metrics import confusion_matrix as sk_confusion_matrix

from src.core.errors import ConstantInput, EmptyClassRow, LabelOutOfRange, LengthMismatch
from src.models.config import LossSpec

logger = logging.getLogger(__name__)

POSTERIOR_FLOOR = 1e-12

LossResult = Tuple[float, np.ndarray]


def _as_pair(pred, target, min_length: int) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if pred.shape != target.shape:
        raise LengthMismatch(f"Prediction length {pred.size} != target length {target.size}")
    if pred.size < min_length:
        raise LengthMismatch(f"Need at least {min_length} values, got {pred.size}")
    return pred, target


# ============================================================================
# CORRELATION
# ============================================================================

def pearson_r(pred, target) -> float:
    """
    Pearson correlation with population (1/N) moments, clamped to [-1, 1].

    Raises:
        LengthMismatch: Unequal lengths or fewer than 2 values
        ConstantInput: Either sequence has zero variance
    """
    pred, target = _as_pair(pred, target, 2)
    pc = pred - pred.mean()
    tc = target - target.mean()
    s_pp = float(pc @ pc)
    s_tt = float(tc @ tc)
    if s_tt == 0.0:
        raise ConstantInput("Target sequence is constant; correlation undefined")
    if s_pp == 0.0:
        raise ConstantInput("Prediction sequence is constant; correlation undefined")
    r = float(pc @ tc) / np.sqrt(s_pp * s_tt)
    return float(np.clip(r, -1.0, 1.0))


def corr_loss(pred, target) -> LossResult:
    """
    1 - r and its gradient w.r.t. pred.

    dr/dp = tc / sqrt(Spp * Stt) - r * pc / Spp (centered sequences; the
    centering terms vanish because centered values sum to zero).

    A constant prediction has no defined r: it is scored r = 0 and pushed along
    the centered target, scaled to unit RMS.

    Raises:
        ConstantInput: Target is constant
    """
    pred, target = _as_pair(pred, target, 2)
    pc = pred - pred.mean()
    tc = target - target.mean()
    s_tt = float(tc @ tc)
    if s_tt == 0.0:
        raise ConstantInput("Target sequence is constant; correlation loss undefined")
    s_pp = float(pc @ pc)
    if s_pp == 0.0:
        return 1.0, -tc / np.sqrt(s_tt * pred.size)

    norm = np.sqrt(s_pp * s_tt)
    r = float(pc @ tc) / norm
    grad_r = tc / norm - r * pc / s_pp
    return 1.0 - float(np.clip(r, -1.0, 1.0)), -grad_r


# ============================================================================
# SQUARED ERROR
# ============================================================================

def mse(pred, target) -> LossResult:
    """(1/N) sum (p - t)^2 with gradient 2 (p - t) / N"""
    pred, target = _as_pair(pred, target, 1)
    diff = pred - target
    return float(diff @ diff) / diff.size, 2.0 * diff / diff.size


def corr_plus_mse(pred, target, weight: float = 0.1) -> LossResult:
    """corr_loss + weight * mse"""
    if weight < 0:
        raise ValueError(f"MSE weight must be >= 0, got {weight}")
    c_loss, c_grad = corr_loss(pred, target)
    m_loss, m_grad = mse(pred, target)
    return c_loss + weight * m_loss, c_grad + weight * m_grad


# ============================================================================
# CLASSIFICATION
# ============================================================================

def cross_entropy(posterior, label: int) -> LossResult:
    """
    -log(max(posterior[label], 1e-12)).

    The gradient is w.r.t. the pre-softmax logits: posterior - one_hot(label).

    Raises:
        LabelOutOfRange: label outside [0, n_classes)
    """
    posterior = np.asarray(posterior, dtype=np.float64).reshape(-1)
    if not (0 <= label < posterior.size):
        raise LabelOutOfRange(f"Label {label} outside [0, {posterior.size})")
    loss = -float(np.log(max(posterior[label], POSTERIOR_FLOOR)))
    grad = posterior.copy()
    grad[label] -= 1.0
    return loss, grad


def loss_and_grad(spec: LossSpec, output, target) -> LossResult:
    """
    Dispatch on a head's LossSpec.

    Args:
        spec: Loss selection
        output: Posterior (cross_entropy) or predicted values
        target: Class index (cross_entropy) or target values
    """
    if spec.kind == "cross_entropy":
        return cross_entropy(output, int(target))
    if spec.kind == "corr":
        return corr_loss(output, target)
    if spec.kind == "mse":
        return mse(output, target)
    return corr_plus_mse(output, target, spec.weight)


# ============================================================================
# METRICS
# ============================================================================

def confusion(true_labels: Sequence[int], predicted: Sequence[int], n_classes: int) -> np.ndarray:
    """n x n count matrix; rows are true classes, columns decisions"""
    true_labels = np.asarray(true_labels, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    for values in (true_labels, predicted):
        if values.size and (values.min() < 0 or values.max() >= n_classes):
            raise LabelOutOfRange(f"Class index outside [0, {n_classes})")
    if true_labels.size == 0:
        return np.zeros((n_classes, n_classes), dtype=np.int64)
    return sk_confusion_matrix(true_labels, predicted, labels=list(range(n_classes))).astype(np.int64)


def per_class_recall(matrix) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    totals = matrix.sum(axis=1)
    empty = np.flatnonzero(totals == 0)
    if empty.size:
        raise EmptyClassRow(f"No examples of true class(es) {empty.tolist()}; recall undefined")
    return np.diag(matrix) / totals


def uar(matrix) -> float:
    """
    Unweighted average recall: mean over rows of diagonal / row sum.

    Raises:
        EmptyClassRow: A true class has no counts
    """
    return float(per_class_recall(matrix).mean())


def present_class_uar(matrix) -> float:
    """UAR over the rows that have counts (training-time monitoring only)"""
    matrix = np.asarray(matrix, dtype=np.float64)
    totals = matrix.sum(axis=1)
    present = totals > 0
    if not present.any():
        return 0.0
    return float((np.diag(matrix)[present] / totals[present]).mean())
