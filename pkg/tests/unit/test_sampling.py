"""
Unit tests for class-imbalance resampling.

Tests cover:
- Empirical and probabilistic target distributions
- Upsampling exactness (single task and label tuples)
- Probabilistic sampling: determinism, reachability and fallback
- Epoch planning for each sampler mode
"""

from collections import Counter

import numpy as np
import pytest

from src.core import sampling
from src.core.errors import EmptyLabels, LabelOutOfRange, MissingClass, NoExamples, UnreachableClass
from src.models.config import SamplerConfig
from src.models.domain import Distribution
from tests.fixtures.synthetic import labeled, labeled_pairs


class TestDistributions:
    """Test class distributions"""

    def test_class_distribution(self):
        dist = sampling.class_distribution([0, 0, 0, 1], 3)
        np.testing.assert_allclose(dist.vector, [0.75, 0.25, 0.0])

    def test_class_distribution_errors(self):
        with pytest.raises(EmptyLabels):
            sampling.class_distribution([], 2)
        with pytest.raises(LabelOutOfRange):
            sampling.class_distribution([0, 2], 2)

    @pytest.mark.parametrize(
        "lam, expected",
        [(1.0, [0.8, 0.2]), (0.0, [0.5, 0.5]), (0.6, [0.68, 0.32])],
    )
    def test_probabilistic_target(self, lam, expected):
        original = Distribution.from_vector([0.8, 0.2])
        np.testing.assert_allclose(sampling.probabilistic_target(original, lam).vector, expected)

    def test_lambda_out_of_range(self):
        with pytest.raises(ValueError):
            sampling.probabilistic_target(Distribution.from_vector([0.5, 0.5]), 1.2)

    def test_target_stays_on_simplex(self, rng):
        for _ in range(20):
            original = Distribution.from_vector(rng.dirichlet(np.ones(5)))
            for lam in np.linspace(0.0, 1.0, 11):
                vector = sampling.probabilistic_target(original, lam).vector
                assert np.all(vector >= 0.0)
                assert abs(vector.sum() - 1.0) <= 1e-12

    def test_target_moves_monotonically_with_lambda(self):
        original = Distribution.from_vector([0.7, 0.2, 0.1, 0.0])
        uniform = np.full(4, 0.25)
        lams = np.linspace(0.0, 1.0, 21)
        targets = [sampling.probabilistic_target(original, lam).vector for lam in lams]
        to_original = [np.abs(t - original.vector).sum() for t in targets]
        to_uniform = [np.abs(t - uniform).sum() for t in targets]
        assert np.all(np.diff(to_original) <= 1e-12)
        assert np.all(np.diff(to_uniform) >= -1e-12)


class TestUpsampling:
    """Test balancing by repetition"""

    def test_single_task_exact_balance(self):
        examples = labeled([0, 0, 0, 0, 1, 2, 2])
        indices = sampling.upsample(examples, "label")
        counts = Counter(examples[i].labels["label"] for i in indices)
        assert counts == {0: 4, 1: 4, 2: 4}
        assert set(indices) == set(range(len(examples)))

    def test_cyclic_order(self):
        examples = labeled([0, 0, 0, 1, 1])
        assert sampling.upsample(examples, "label") == [0, 1, 2, 3, 4, 3]

    def test_missing_class(self):
        with pytest.raises(MissingClass):
            sampling.upsample(labeled([0, 0, 2]), "label")
        with pytest.raises(MissingClass):
            sampling.upsample(labeled([0, 1]), "label", n_classes=3)

    def test_multitask_pairs_balanced(self):
        examples = labeled_pairs([(0, 0), (0, 0), (0, 0), (1, 0), (1, 1), (1, 1)])
        indices = sampling.upsample_multitask(examples, ["A", "B"])
        counts = Counter(examples[i].label_tuple(["A", "B"]) for i in indices)
        assert counts == {(0, 0): 3, (1, 0): 3, (1, 1): 3}
        assert set(indices) == set(range(len(examples)))

    def test_multitask_marginals_follow_groups(self):
        examples = labeled_pairs([(0, 0), (0, 0), (0, 0), (1, 1)])
        indices = sampling.upsample_multitask(examples, ["A", "B"])
        assert Counter(indices) == {0: 1, 1: 1, 2: 1, 3: 3}
        for task in ("A", "B"):
            marginal = Counter(examples[i].labels[task] for i in indices)
            assert marginal[0] / len(indices) == pytest.approx(0.5)
            assert marginal[1] / len(indices) == pytest.approx(0.5)

    def test_multitask_empty(self):
        with pytest.raises(NoExamples):
            sampling.upsample_multitask([], ["A"])


class TestProbabilisticSampler:
    """Test i.i.d. class draws"""

    def test_deterministic_for_seed(self):
        examples = labeled([0] * 8 + [1] * 2)
        a = sampling.probabilistic_sampler(examples, "label", 0.6, seed=42, n_draws=50)
        b = sampling.probabilistic_sampler(examples, "label", 0.6, seed=42, n_draws=50)
        c = sampling.probabilistic_sampler(examples, "label", 0.6, seed=43, n_draws=50)
        assert a == b
        assert a != c
        assert all(0 <= i < len(examples) for i in a)

    def test_stream_continues_across_draws(self):
        examples = labeled([0] * 5 + [1] * 5)
        sampler = sampling.ProbabilisticSampler(examples, "label", 0.5, seed=9)
        joined = sampler.draw(10) + sampler.draw(10)
        assert len(joined) == 20
        assert joined != joined[:10] * 2

    def test_unreachable_class(self):
        with pytest.raises(UnreachableClass):
            sampling.ProbabilisticSampler(labeled([0, 0, 1]), "label", 0.5, seed=1, n_classes=3)

    def test_lambda_one_leaves_absent_class_at_zero(self):
        sampler = sampling.ProbabilisticSampler(labeled([0, 0, 1]), "label", 1.0, seed=1, n_classes=3)
        assert sampler.target.probs[2] == 0.0
        assert set(sampler.draw(100)) <= {0, 1, 2}

    def test_small_sample_frequencies(self):
        labels = [0] * 70 + [1] * 20 + [2] * 10
        examples = labeled(labels)
        draws = sampling.probabilistic_sampler(examples, "label", 0.0, seed=5, n_draws=6000)
        freq = np.bincount([labels[i] for i in draws], minlength=3) / 6000
        np.testing.assert_allclose(freq, [1 / 3] * 3, atol=0.03)


class TestMultitaskSampler:
    """Test label-tuple draws"""

    def test_single_task_matches_single_sampler(self):
        examples = labeled([0, 0, 0, 1, 1, 2], task="A")
        single = sampling.probabilistic_sampler(examples, "A", 0.6, seed=17, n_draws=40)
        multi = sampling.probabilistic_sampler_multitask(examples, ["A"], 0.6, seed=17, n_draws=40)
        assert single == multi

    def test_nearest_tuple_fallback(self):
        examples = labeled_pairs([(0, 0), (1, 1)])
        sampler = sampling.MultitaskProbabilisticSampler(examples, ["A", "B"], 0.5, seed=3)
        assert sampler.nearest_tuple((0, 1)) == (0, 0)
        assert sampler.nearest_tuple((1, 0)) == (0, 0)

    def test_single_reject_draws_valid_indices(self):
        examples = labeled_pairs([(0, 0), (1, 1), (1, 1)])
        draws = sampling.probabilistic_sampler_multitask(
            examples, ["A", "B"], 0.5, seed=3, n_draws=200, max_rejects=1
        )
        assert all(0 <= i < 3 for i in draws)

    def test_fallbacks_counted(self):
        examples = labeled_pairs([(0, 0), (1, 1)])
        sampler = sampling.MultitaskProbabilisticSampler(examples, ["A", "B"], 0.0, seed=8, max_rejects=1)
        sampler.draw(500)
        assert sampler.fallbacks > 0


class TestEpochSampler:
    """Test per-epoch example orders"""

    def test_none_is_permutation(self):
        examples = labeled([0, 1, 0, 1, 0])
        planner = sampling.EpochSampler(SamplerConfig(mode="none"), examples, ["label"], {"label": 2}, 4)
        first, second = planner.next_epoch(), planner.next_epoch()
        assert sorted(first.tolist()) == list(range(5))
        assert sorted(second.tolist()) == list(range(5))
        assert planner.epoch_size == 5

    def test_upsample_is_permuted_multiset(self):
        examples = labeled([0, 0, 0, 1])
        planner = sampling.EpochSampler(SamplerConfig(mode="upsample"), examples, ["label"], {"label": 2}, 4)
        order = planner.next_epoch()
        assert planner.epoch_size == 6
        assert sorted(order.tolist()) == [0, 1, 2, 3, 3, 3]

    def test_probabilistic_draws_dataset_size(self):
        examples = labeled([0, 0, 0, 1])
        cfg = SamplerConfig(mode="probabilistic", lam=0.6, seed=2)
        planner = sampling.EpochSampler(cfg, examples, ["label"], {"label": 2}, 4)
        assert len(planner.next_epoch()) == 4

    def test_balancing_needs_a_task(self):
        with pytest.raises(ValueError):
            sampling.EpochSampler(SamplerConfig(mode="upsample"), labeled([0, 1]), [], {}, 0)
