"""
Integration tests for the training mechanisms on synthetic corpora.

SEEDED RUNS TO CONVERGENCE - NO MOCKS

Tests cover:
- Overfitting a small two-class corpus
- Scale mismatch of correlation-only training against corr+MSE
- Variance reduction from averaging ensemble members
- Saliency finding the only informative band
- Sampler convergence to the probabilistic target
"""

from collections import Counter

import numpy as np
import pytest

from src.core import losses, net, sampling, saliency, training
from src.core.ensemble import train_ensemble
from src.models.config import EnsembleSpec, HeadSpec, SamplerConfig, TrainConfig
from tests.fixtures.synthetic import (
    band0_corpus,
    band0_spectrograms,
    labeled,
    labeled_pairs,
    make_arch,
    regression_corpus,
)


def train_uar(params, data) -> float:
    decided = [int(np.argmax(net.predict(params, ex.features)["label"])) for ex in data]
    truth = [ex.labels["label"] for ex in data]
    return losses.uar(losses.confusion(truth, decided, 2))


def sequence_scores(params, data, head: str = "S"):
    """(mean per-file Pearson r, mean per-file MSE)"""
    rs, mses = [], []
    for ex in data:
        pred = net.predict(params, ex.features)[head]
        rs.append(losses.pearson_r(pred, ex.targets[head]))
        mses.append(losses.mse(pred, ex.targets[head])[0])
    return float(np.mean(rs)), float(np.mean(mses))


# =============================================================================
# Training
# =============================================================================

class TestOverfit:
    """Test capacity on a tiny corpus"""

    def test_reaches_perfect_train_uar(self):
        arch = make_arch(bands=4, filters=8, lstm=8, ff=8)
        data = band0_corpus(n_per_class=10, bands=4)
        assert len(data) == 20
        tcfg = TrainConfig(epochs=200, batch_size=4, learning_rate=0.01, init_seed=1, shuffle_seed=2)
        result = training.train(arch, data, SamplerConfig(), tcfg)
        assert train_uar(result.params, data) == 1.0


class TestScaleMismatch:
    """Test that correlation-only training leaves the target scale unlearned"""

    def test_corr_only_has_larger_mse(self):
        heads = [HeadSpec(name="S", kind="regression_sequence", ff_units=8)]
        arch = make_arch(bands=3, heads=heads, filters=8, lstm=8)
        train_set = regression_corpus(arch, n=16, seed=11)
        dev_set = regression_corpus(arch, n=8, seed=12)

        scores = {}
        for loss in ("corr", "corr_plus_mse"):
            tcfg = TrainConfig(
                epochs=150, batch_size=4, learning_rate=0.01, loss=loss, mse_weight=0.1,
                init_seed=3, shuffle_seed=4,
            )
            result = training.train(arch, train_set, SamplerConfig(), tcfg)
            scores[loss] = sequence_scores(result.params, dev_set)

        corr_r, corr_mse = scores["corr"]
        mixed_r, mixed_mse = scores["corr_plus_mse"]
        assert corr_r >= 0.8
        assert mixed_r >= 0.8
        assert corr_mse >= 3.0 * mixed_mse


class TestEnsembleVariance:
    """Test that member averaging reduces prediction variance"""

    def test_ensembles_of_five_vary_less_than_single_models(self):
        heads = [HeadSpec(name="S", kind="regression_sequence", ff_units=4)]
        arch = make_arch(bands=3, heads=heads, filters=4, lstm=4)
        data = regression_corpus(arch, n=8, frames=16, seed=21)
        probe = regression_corpus(arch, n=4, frames=16, seed=22)
        tcfg = TrainConfig(epochs=5, batch_size=4, learning_rate=0.01, loss="corr_plus_mse")
        spec = EnsembleSpec(n_models=50, base_seed=0, arch=arch, tcfg=tcfg, sampler=SamplerConfig())
        members = train_ensemble(spec, data)

        # models x probe files x output frames
        outputs = np.stack([np.stack([net.predict(p, ex.features)["S"] for ex in probe]) for p in members])
        ensembles = outputs.reshape(10, 5, *outputs.shape[1:]).mean(axis=1)
        assert float(ensembles.var(axis=0).mean()) < float(outputs.var(axis=0).mean())


class TestSaliencyBand:
    """Test that saliency points at the informative band"""

    def test_band_zero_dominates_for_every_member(self):
        arch = make_arch(bands=4, filters=8, lstm=8, ff=8)
        data = band0_corpus(n_per_class=10, bands=4)
        tcfg = TrainConfig(epochs=60, batch_size=4, learning_rate=0.01)
        spec = EnsembleSpec(n_models=3, base_seed=5, arch=arch, tcfg=tcfg, sampler=SamplerConfig())
        members = train_ensemble(spec, data)
        maps = saliency.band_importance(members, band0_spectrograms(data))
        assert [int(np.argmax(m.per_band)) for m in maps] == [0, 0, 0]


# =============================================================================
# Sampling
# =============================================================================

class TestSamplerConvergence:
    """Test long-run draw frequencies"""

    @pytest.mark.parametrize("lam", [0.0, 0.6, 1.0])
    def test_single_task(self, lam):
        labels = [0] * 70 + [1] * 20 + [2] * 10
        examples = labeled(labels)
        target = sampling.probabilistic_target(sampling.class_distribution(labels, 3), lam).vector
        draws = sampling.probabilistic_sampler(examples, "label", lam, seed=99, n_draws=100_000)
        freq = np.bincount([labels[i] for i in draws], minlength=3) / len(draws)
        assert np.abs(freq - target).sum() <= 0.02

    @pytest.mark.parametrize("lam", [0.0, 0.6, 1.0])
    def test_multitask_marginals(self, lam):
        pairs = [(0, 0)] * 40 + [(0, 1)] * 20 + [(1, 0)] * 25 + [(1, 1)] * 10 + [(2, 0)] * 3 + [(2, 1)] * 2
        examples = labeled_pairs(pairs)
        sampler = sampling.MultitaskProbabilisticSampler(examples, ["A", "B"], lam, seed=101)
        draws = sampler.draw(100_000)
        assert sampler.fallbacks == 0
        for position, task in enumerate(("A", "B")):
            counts = Counter(pairs[i][position] for i in draws)
            target = sampler.targets[task].vector
            freq = np.array([counts[c] for c in range(len(target))]) / len(draws)
            assert np.abs(freq - target).sum() <= 0.02
        if lam == 0.0:
            np.testing.assert_allclose(sampler.targets["A"].vector, [1 / 3] * 3)
