"""
Training Loop

Minibatch gradient descent over the network in src.core.net:

1. Each epoch asks the EpochSampler for an example order (plain shuffle,
   upsampled multiset or probabilistic draws).
2. Consecutive slices of batch_size indices form minibatches. Inside a
   minibatch, examples with equal feature shapes run through the network
   together; gradients are summed and scaled by 1 / batch size.
3. Gradients are clipped to a global L2 norm, then applied by SGD or Adam.

The multi-task objective is the unweighted sum of head losses. Single-threaded
and deterministic for fixed (init_seed, shuffle_seed, sampler seed).
"""

import logging
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from src.core import losses, net
from src.core.errors import ConstantInput, NoExamples, NonFiniteLoss, SchemaMismatch, ShapeMismatch
from src.core.sampling import EpochSampler
from src.models.config import Architecture, HeadSpec, LossSpec, SamplerConfig, TrainConfig
from src.models.domain import LabeledExample, ModelParams

logger = logging.getLogger(__name__)


# ============================================================================
# OPTIMIZERS
# ============================================================================

class SGD:
    """Plain gradient descent: p -= lr * g"""

    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate

    def step(self, tensors: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        for name, grad in grads.items():
            tensors[name] -= self.learning_rate * grad


class Adam:
    """Adam with bias-corrected first and second moment estimates"""

    def __init__(self, learning_rate: float, beta1: float, beta2: float, epsilon: float):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, tensors: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for name, grad in grads.items():
            m = self.m.setdefault(name, np.zeros_like(grad))
            v = self.v.setdefault(name, np.zeros_like(grad))
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            tensors[name] -= self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.epsilon)


def make_optimizer(tcfg: TrainConfig):
    if tcfg.optimizer == "sgd":
        return SGD(tcfg.learning_rate)
    return Adam(tcfg.learning_rate, tcfg.beta1, tcfg.beta2, tcfg.epsilon)


def clip_global_norm(grads: Dict[str, np.ndarray], max_norm: Optional[float]) -> float:
    """Scale grads in place so their joint L2 norm is at most max_norm; returns the pre-clip norm"""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# ============================================================================
# RESULTS
# ============================================================================

@dataclass
class EpochRecord:
    """Running training statistics of one head over one epoch"""
    epoch: int
    head: str
    loss: float
    metric: str
    value: float


@dataclass
class TrainResult:
    params: ModelParams
    log: List[EpochRecord] = field(default_factory=list)
    epoch_seconds: List[float] = field(default_factory=list)

    def final_metric(self, head: str) -> float:
        return [r for r in self.log if r.head == head][-1].value


class _HeadStats:
    """Accumulates one head's losses and predictions during an epoch"""

    def __init__(self, head: HeadSpec):
        self.head = head
        self.loss_sum = 0.0
        self.count = 0
        self.true: List[int] = []
        self.decided: List[int] = []
        self.values: List[float] = []

    def add(self, loss: float, output: np.ndarray, target) -> None:
        self.loss_sum += loss
        self.count += 1
        if self.head.kind == "classification":
            self.true.append(int(target))
            self.decided.append(int(np.argmax(output)))
        elif self.head.kind == "regression_sequence":
            try:
                self.values.append(losses.pearson_r(output, target))
            except ConstantInput:
                pass
        else:
            self.values.append(losses.mse(output, target)[0])

    def record(self, epoch: int) -> EpochRecord:
        loss = self.loss_sum / max(self.count, 1)
        if self.head.kind == "classification":
            matrix = losses.confusion(self.true, self.decided, self.head.n_classes)
            metric, value = "uar", losses.present_class_uar(matrix)
        elif self.head.kind == "regression_sequence":
            metric, value = "pearson_r", float(np.mean(self.values)) if self.values else 0.0
        else:
            metric, value = "mse", float(np.mean(self.values)) if self.values else 0.0
        return EpochRecord(epoch=epoch, head=self.head.name, loss=loss, metric=metric, value=value)


# ============================================================================
# TRAINING
# ============================================================================

def _check_data(arch: Architecture, data: Sequence[LabeledExample]) -> None:
    if not data:
        raise NoExamples("Training needs at least one example")
    for ex in data:
        if ex.features.ndim != 2 or ex.features.shape[1] != arch.input_bands:
            raise ShapeMismatch(
                f"{ex.source_id}: features {ex.features.shape} do not match {arch.input_bands} input bands"
            )
        for head in arch.heads:
            if head.kind == "classification":
                if head.name not in ex.labels:
                    raise SchemaMismatch(f"{ex.source_id}: no label for task {head.name!r}")
                continue
            if head.name not in ex.targets:
                raise SchemaMismatch(f"{ex.source_id}: no target for task {head.name!r}")
            expected = arch.output_frames(ex.features.shape[0]) if head.kind == "regression_sequence" else 1
            if np.asarray(ex.targets[head.name]).size != expected:
                raise ShapeMismatch(
                    f"{ex.source_id}: target for {head.name!r} has {np.asarray(ex.targets[head.name]).size} "
                    f"values, the model produces {expected}"
                )


def _target(example: LabeledExample, head: HeadSpec):
    if head.kind == "classification":
        return example.labels[head.name]
    return np.asarray(example.targets[head.name], dtype=np.float64).reshape(-1)


def _group_by_shape(data: Sequence[LabeledExample], batch: np.ndarray) -> List[List[int]]:
    groups: Dict[tuple, List[int]] = {}
    for idx in batch.tolist():
        groups.setdefault(data[idx].features.shape, []).append(idx)
    return list(groups.values())


def batch_gradients(
    params: ModelParams,
    data: Sequence[LabeledExample],
    batch: np.ndarray,
    loss_specs: Dict[str, LossSpec],
    stats: Optional[Dict[str, _HeadStats]] = None,
):
    """
    Mean loss and mean gradients of one minibatch.

    Returns:
        (loss, grads) with loss summed over heads and averaged over examples
    """
    arch = params.arch
    total_loss = 0.0
    grads = {name: np.zeros_like(t) for name, t in params.tensors.items()}
    for group in _group_by_shape(data, batch):
        x = np.stack([data[i].features for i in group])
        result = net.forward(params, x, mode="train")
        output_grads = net.output_grad_template(params, len(group), x.shape[1])
        for head in arch.heads:
            outputs = result.outputs[head.name]
            for j, idx in enumerate(group):
                target = _target(data[idx], head)
                output = outputs[j : j + 1] if head.kind == "regression_scalar" else outputs[j]
                loss, grad = losses.loss_and_grad(loss_specs[head.name], output, target)
                output_grads[head.name][j] = grad[0] if head.kind == "regression_scalar" else grad
                total_loss += loss
                if stats is not None:
                    stats[head.name].add(loss, output, target)
        for name, g in net.backward(result.cache, params, output_grads).params.items():
            grads[name] += g

    scale = 1.0 / len(batch)
    for g in grads.values():
        g *= scale
    return total_loss * scale, grads


def train(
    arch: Architecture,
    data: Sequence[LabeledExample],
    sampler: SamplerConfig,
    tcfg: TrainConfig,
    member: Optional[int] = None,
) -> TrainResult:
    """
    Train one network from init_params(arch, tcfg.init_seed).

    Args:
        arch: Network shape
        data: Training examples
        sampler: Class-imbalance resampling for the classification heads
        tcfg: Optimizer, loss and seed settings
        member: Ensemble member index, used only to tag errors and log lines

    Returns:
        TrainResult with the final parameters and one EpochRecord per head per epoch

    Raises:
        NoExamples, SchemaMismatch, ShapeMismatch: Invalid training data
        NonFiniteLoss: A minibatch loss or gradient became NaN/inf
    """
    _check_data(arch, data)
    tag = f"model {member}" if member is not None else "model"
    params = net.init_params(arch, tcfg.init_seed)
    loss_specs = {head.name: tcfg.loss_spec_for(head) for head in arch.heads}
    class_heads = [h for h in arch.heads if h.kind == "classification"]
    epochs_sampler = EpochSampler(
        sampler,
        data,
        [h.name for h in class_heads],
        {h.name: h.n_classes for h in class_heads},
        tcfg.shuffle_seed,
    )
    optimizer = make_optimizer(tcfg)
    result = TrainResult(params=params)

    logger.info(
        f"Training {tag}: {len(data)} examples, {tcfg.epochs} epochs, batch {tcfg.batch_size}, "
        f"sampler={sampler.mode}, heads={[h.name for h in arch.heads]}"
    )
    for epoch in range(1, tcfg.epochs + 1):
        started = time.perf_counter()
        stats = {head.name: _HeadStats(head) for head in arch.heads}
        order = epochs_sampler.next_epoch()
        for b, start in enumerate(range(0, len(order), tcfg.batch_size), start=1):
            batch = order[start : start + tcfg.batch_size]
            loss, grads = batch_gradients(params, data, batch, loss_specs, stats)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                logger.error(f"{tag}: non-finite loss at epoch {epoch}, batch {b}")
                raise NonFiniteLoss(epoch, b, member)
            norm = clip_global_norm(grads, tcfg.grad_clip)
            optimizer.step(params.tensors, grads)
            logger.debug(f"{tag} epoch {epoch} batch {b}: loss={loss:.6f} grad_norm={norm:.4f}")

        records = [stats[head.name].record(epoch) for head in arch.heads]
        result.log.extend(records)
        result.epoch_seconds.append(time.perf_counter() - started)
        summary = ", ".join(f"{r.head}: loss={r.loss:.4f} {r.metric}={r.value:.4f}" for r in records)
        logger.info(f"{tag} epoch {epoch}/{tcfg.epochs}: {summary}")

    return result


def epoch_losses(result: TrainResult, head: str) -> List[float]:
    """Per-epoch running loss of one head"""
    by_head = defaultdict(list)
    for record in result.log:
        by_head[record.head].append(record.loss)
    return by_head[head]
