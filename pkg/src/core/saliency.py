"""
Input-Gradient Saliency

Gradients of one selected network output w.r.t. every input cell, and their
per-band aggregation across files and models. The selected output is, per
head kind:

- classification: the pre-softmax logit of a class (default: the predicted
  class), or its posterior when target="probability"
- regression_scalar: the output value
- regression_sequence: the mean of the output sequence
"""

import logging
from typing import Dict, List, Literal, Optional, Sequence, Union

import numpy as np

from src.core import net
from src.core.errors import LabelOutOfRange, NoExamples
from src.models.domain import MelSpectrogram, ModelParams, SaliencyMap

logger = logging.getLogger(__name__)

Target = Literal["logit", "probability"]


def _output_grads(
    params: ModelParams,
    result: net.ForwardResult,
    head_name: str,
    class_index: Optional[int],
    target: Target,
) -> Dict[str, np.ndarray]:
    head = params.arch.head(head_name)
    if head.kind == "classification":
        posterior = result.outputs[head_name][0]
        c = int(np.argmax(posterior)) if class_index is None else int(class_index)
        if not (0 <= c < head.n_classes):
            raise LabelOutOfRange(f"Class {c} outside [0, {head.n_classes}) for head {head_name!r}")
        grad = np.zeros((1, head.n_classes))
        grad[0, c] = 1.0
        if target == "probability":
            # d p_c / d logits = p_c * (one_hot(c) - p)
            grad = posterior[c] * (grad - posterior)
        return {head_name: grad}
    if head.kind == "regression_scalar":
        return {head_name: np.ones(1)}
    steps = result.outputs[head_name].shape[1]
    return {head_name: np.full((1, steps), 1.0 / steps)}


def input_gradients(
    params: ModelParams,
    inputs: Union[MelSpectrogram, np.ndarray],
    head: Optional[str] = None,
    class_index: Optional[int] = None,
    target: Target = "logit",
) -> np.ndarray:
    """
    Exact gradient of the selected output w.r.t. each input cell.

    Args:
        params: Trained network
        inputs: frames x bands matrix
        head: Head name (default: the first head)
        class_index: Class whose output is differentiated (default: argmax)
        target: "logit" (pre-softmax) or "probability" (posterior)

    Returns:
        frames x bands gradient matrix
    """
    head = head or params.arch.heads[0].name
    result = net.forward(params, inputs, mode="train")
    grads = net.backward(
        result.cache, params, _output_grads(params, result, head, class_index, target), input_grad=True
    )
    return grads.inputs[0]


def band_importance(
    models: Sequence[ModelParams],
    dataset: Sequence[Union[MelSpectrogram, np.ndarray]],
    head: Optional[str] = None,
    class_index: Optional[int] = None,
    target: Target = "logit",
    absolute: bool = True,
    single_file: Optional[int] = None,
) -> List[SaliencyMap]:
    """
    Per-band importance of every model.

    For each model the |gradient| (signed gradient when absolute=False) is
    averaged per band over every frame of every file, so longer files weigh
    more.

    Args:
        single_file: Index into dataset whose full frames x bands map is kept
            as per_cell

    Raises:
        NoExamples: Empty dataset
    """
    if not dataset:
        raise NoExamples("Saliency needs at least one input file")
    first = dataset[0]
    centers = first.band_centers_hz if isinstance(first, MelSpectrogram) else None

    maps: List[SaliencyMap] = []
    for m, params in enumerate(models):
        band_sums = np.zeros(params.arch.input_bands)
        n_frames = 0
        per_cell = None
        for f, inputs in enumerate(dataset):
            grad = input_gradients(params, inputs, head, class_index, target)
            cells = np.abs(grad) if absolute else grad
            band_sums += cells.sum(axis=0)
            n_frames += cells.shape[0]
            if single_file is not None and f == single_file:
                per_cell = cells
        per_band = band_sums / n_frames
        logger.info(f"Model {m}: most important band {int(np.argmax(per_band))} over {len(dataset)} file(s)")
        maps.append(SaliencyMap(per_band=per_band, per_cell=per_cell, band_centers_hz=centers))
    return maps
