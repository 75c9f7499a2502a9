"""
Class-Imbalance Resampling

Two schemes, each in a single-task and a multi-task (label-tuple) variant:

- Upsampling: repeat examples of smaller classes (or label-tuple groups) until
  every class (group) is as large as the largest one. Repeats cycle through a
  class's examples in original order.
- Probabilistic sampling: draw classes i.i.d. from
  lam * original + (1 - lam) * uniform, then an example uniformly within the
  drawn class. The multi-task variant draws each task's label independently,
  rejects label tuples with no examples up to max_rejects times, then falls
  back to the nearest existing tuple (Hamming distance, lowest tuple on ties).

All randomness goes through numpy's PCG64 bit generator seeded with an
unsigned 64-bit integer. Samplers return index streams, never copied data.
"""

import logging
from collections import defaultdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import (
    EmptyLabels,
    LabelOutOfRange,
    MissingClass,
    NoExamples,
    UnreachableClass,
)
from src.models.config import SamplerConfig
from src.models.domain import Distribution, LabeledExample

logger = logging.getLogger(__name__)


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator for a 64-bit seed"""
    return np.random.Generator(np.random.PCG64(int(seed)))


# ============================================================================
# DISTRIBUTIONS
# ============================================================================

def class_distribution(labels: Sequence[int], n_classes: int) -> Distribution:
    """Empirical class frequencies count(c) / total"""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise EmptyLabels("Cannot compute a class distribution of no labels")
    if labels.min() < 0 or labels.max() >= n_classes:
        bad = int(labels[(labels < 0) | (labels >= n_classes)][0])
        raise LabelOutOfRange(f"Label {bad} outside [0, {n_classes})")
    counts = np.bincount(labels, minlength=n_classes)
    return Distribution.from_vector(counts / labels.size)


def probabilistic_target(original: Distribution, lam: float) -> Distribution:
    """lam * original + (1 - lam) / n_classes"""
    if not (0.0 <= lam <= 1.0):
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    n = original.n_classes
    return Distribution.from_vector(lam * original.vector + (1.0 - lam) / n)


def _task_labels(examples: Sequence[LabeledExample], task: str) -> np.ndarray:
    return np.array([ex.labels[task] for ex in examples], dtype=np.int64)


def _resolve_n_classes(labels: np.ndarray, n_classes: Optional[int]) -> int:
    if labels.size == 0:
        raise EmptyLabels("No examples to sample from")
    return int(n_classes) if n_classes is not None else int(labels.max()) + 1


def _cycle(indices: List[int], size: int) -> List[int]:
    return [indices[j % len(indices)] for j in range(size)]


# ============================================================================
# UPSAMPLING
# ============================================================================

def upsample(
    examples: Sequence[LabeledExample],
    task: str,
    n_classes: Optional[int] = None,
) -> List[int]:
    """
    Balance one task by repetition.

    Args:
        examples: Training examples
        task: Task whose labels are balanced
        n_classes: Number of classes (default: largest label + 1)

    Returns:
        Index multiset, grouped by class in class order; every class has the
        size of the largest original class and every original index appears

    Raises:
        MissingClass: A class in [0, n_classes) has no examples
    """
    labels = _task_labels(examples, task)
    n = _resolve_n_classes(labels, n_classes)
    groups = [np.flatnonzero(labels == c).tolist() for c in range(n)]
    empty = [c for c, members in enumerate(groups) if not members]
    if empty:
        raise MissingClass(f"Task {task!r}: no examples for class(es) {empty}")

    target = max(len(members) for members in groups)
    indices: List[int] = []
    for members in groups:
        indices.extend(_cycle(members, target))
    logger.debug(f"Upsampled task {task!r}: {len(labels)} -> {len(indices)} examples")
    return indices


def upsample_multitask(examples: Sequence[LabeledExample], tasks: Sequence[str]) -> List[int]:
    """
    Balance label-tuple groups by repetition.

    Per-task marginals are not guaranteed to be balanced afterwards.
    """
    if not examples:
        raise NoExamples("No examples to upsample")
    groups: Dict[Tuple[int, ...], List[int]] = defaultdict(list)
    for i, ex in enumerate(examples):
        groups[ex.label_tuple(list(tasks))].append(i)

    target = max(len(members) for members in groups.values())
    indices: List[int] = []
    for key in sorted(groups):
        indices.extend(_cycle(groups[key], target))
    logger.debug(
        f"Upsampled {len(groups)} label groups of {list(tasks)}: {len(examples)} -> {len(indices)} examples"
    )
    return indices


# ============================================================================
# PROBABILISTIC SAMPLING
# ============================================================================

def _cdf(probs: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    return cdf


class ProbabilisticSampler:
    """
    Stateful single-task sampler; successive draw() calls continue one stream.

    Attributes:
        target: Desired class distribution
        members: Example indices per class
    """

    def __init__(
        self,
        examples: Sequence[LabeledExample],
        task: str,
        lam: float,
        seed: int,
        n_classes: Optional[int] = None,
    ):
        labels = _task_labels(examples, task)
        n = _resolve_n_classes(labels, n_classes)
        self.task = task
        self.target = probabilistic_target(class_distribution(labels, n), lam)
        self.members = [np.flatnonzero(labels == c) for c in range(n)]
        unreachable = [
            c for c in range(n) if self.target.probs[c] > 0 and self.members[c].size == 0
        ]
        if unreachable:
            raise UnreachableClass(
                f"Task {task!r}: classes {unreachable} have target probability > 0 but no examples"
            )
        self._cdf = _cdf(self.target.vector)
        self._rng = make_rng(seed)
        self.logger = logging.getLogger(f"{__name__}.ProbabilisticSampler")

    def draw(self, n_draws: int) -> List[int]:
        """Draw n_draws example indices"""
        classes = np.searchsorted(self._cdf, self._rng.random(n_draws), side="right")
        out = np.empty(n_draws, dtype=np.int64)
        for c, members in enumerate(self.members):
            mask = classes == c
            count = int(mask.sum())
            if count:
                out[mask] = members[self._rng.integers(0, members.size, size=count)]
        return out.tolist()


class MultitaskProbabilisticSampler:
    """
    Stateful multi-task sampler over label tuples.

    With a single task it delegates to ProbabilisticSampler, so the index
    stream is identical to the single-task one.
    """

    def __init__(
        self,
        examples: Sequence[LabeledExample],
        tasks: Sequence[str],
        lam: float,
        seed: int,
        max_rejects: int = 100,
        n_classes: Optional[Dict[str, int]] = None,
    ):
        if not examples:
            raise NoExamples("No examples to sample from")
        self.tasks = list(tasks)
        self.max_rejects = max_rejects
        self.logger = logging.getLogger(f"{__name__}.MultitaskProbabilisticSampler")
        n_classes = n_classes or {}

        self._single: Optional[ProbabilisticSampler] = None
        if len(self.tasks) == 1:
            task = self.tasks[0]
            self._single = ProbabilisticSampler(examples, task, lam, seed, n_classes.get(task))
            return

        self.targets: Dict[str, Distribution] = {}
        self._cdfs: List[np.ndarray] = []
        for task in self.tasks:
            labels = _task_labels(examples, task)
            n = _resolve_n_classes(labels, n_classes.get(task))
            self.targets[task] = probabilistic_target(class_distribution(labels, n), lam)
            self._cdfs.append(_cdf(self.targets[task].vector))

        groups: Dict[Tuple[int, ...], List[int]] = defaultdict(list)
        for i, ex in enumerate(examples):
            groups[ex.label_tuple(self.tasks)].append(i)
        self.groups = {key: np.asarray(members) for key, members in groups.items()}
        self._sorted_tuples = sorted(self.groups)
        self._rng = make_rng(seed)
        self.fallbacks = 0

    def _draw_tuple(self) -> Tuple[int, ...]:
        u = self._rng.random(len(self._cdfs))
        return tuple(int(np.searchsorted(cdf, ui, side="right")) for cdf, ui in zip(self._cdfs, u))

    def nearest_tuple(self, wanted: Tuple[int, ...]) -> Tuple[int, ...]:
        """Existing tuple with minimum Hamming distance; lowest tuple on ties"""
        return min(
            self._sorted_tuples,
            key=lambda t: (sum(a != b for a, b in zip(t, wanted)), t),
        )

    def draw(self, n_draws: int) -> List[int]:
        if self._single is not None:
            return self._single.draw(n_draws)

        out: List[int] = []
        for _ in range(n_draws):
            wanted = self._draw_tuple()
            rejects = 0
            while wanted not in self.groups and rejects < self.max_rejects:
                rejects += 1
                wanted = self._draw_tuple()
            if wanted not in self.groups:
                wanted = self.nearest_tuple(wanted)
                self.fallbacks += 1
            members = self.groups[wanted]
            out.append(int(members[self._rng.integers(0, members.size)]))
        if self.fallbacks:
            self.logger.debug(f"{self.fallbacks} draw(s) fell back to the nearest label tuple so far")
        return out


def probabilistic_sampler(
    examples: Sequence[LabeledExample],
    task: str,
    lam: float,
    seed: int,
    n_draws: int,
    n_classes: Optional[int] = None,
) -> List[int]:
    """n_draws indices from a fresh ProbabilisticSampler"""
    return ProbabilisticSampler(examples, task, lam, seed, n_classes).draw(n_draws)


def probabilistic_sampler_multitask(
    examples: Sequence[LabeledExample],
    tasks: Sequence[str],
    lam: float,
    seed: int,
    n_draws: int,
    max_rejects: int = 100,
    n_classes: Optional[Dict[str, int]] = None,
) -> List[int]:
    """n_draws indices from a fresh MultitaskProbabilisticSampler"""
    sampler = MultitaskProbabilisticSampler(examples, tasks, lam, seed, max_rejects, n_classes)
    return sampler.draw(n_draws)


# ============================================================================
# EPOCH PLANNING
# ============================================================================

class EpochSampler:
    """
    Produces the example order for each training epoch.

    - none: a fresh permutation of all examples
    - upsample: a fresh permutation of the balanced index multiset
    - probabilistic: len(examples) draws continuing one sampler stream

    Label-balancing modes use the classification tasks given; with several
    tasks the label-tuple variants apply.
    """

    def __init__(
        self,
        config: SamplerConfig,
        examples: Sequence[LabeledExample],
        tasks: Sequence[str],
        n_classes: Dict[str, int],
        shuffle_seed: int,
    ):
        self.config = config
        self.n_examples = len(examples)
        self._shuffle_rng = make_rng(shuffle_seed)
        self._base: Optional[np.ndarray] = None
        self._sampler = None
        tasks = list(tasks)

        if config.mode != "none" and not tasks:
            raise ValueError(f"sampler.mode={config.mode} needs at least one classification task")

        if config.mode == "upsample":
            if len(tasks) == 1:
                base = upsample(examples, tasks[0], n_classes.get(tasks[0]))
            else:
                base = upsample_multitask(examples, tasks)
            self._base = np.asarray(base, dtype=np.int64)
        elif config.mode == "probabilistic":
            self._sampler = MultitaskProbabilisticSampler(
                examples, tasks, config.lam, config.seed, config.max_rejects, n_classes
            )

    @property
    def epoch_size(self) -> int:
        if self._base is not None:
            return len(self._base)
        return self.n_examples

    def next_epoch(self) -> np.ndarray:
        if self._sampler is not None:
            return np.asarray(self._sampler.draw(self.n_examples), dtype=np.int64)
        if self._base is not None:
            return self._base[self._shuffle_rng.permutation(len(self._base))]
        return self._shuffle_rng.permutation(self.n_examples)
