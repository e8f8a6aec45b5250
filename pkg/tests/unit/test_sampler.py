"""
Unit tests for negative sampling and batch construction.
"""

import logging

import numpy as np
import pytest

from src.debiased_ranking.data.ratings import ImplicitDataset
from src.debiased_ranking.model import Hyperparams, init
from src.debiased_ranking.sampler import (
    NegativeStrategy,
    SamplerConfig,
    build_points,
    build_triplets,
)

pytestmark = pytest.mark.unit


def _collect(stream):
    batches = list(stream)
    users = np.concatenate([b.users for b in batches])
    pos = np.concatenate([b.pos_items for b in batches])
    neg = np.concatenate([b.neg_items for b in batches])
    return users, pos, neg


class TestSamplerConfig:
    """Test SamplerConfig validation."""

    def test_defaults(self):
        cfg = SamplerConfig()
        assert cfg.num_negatives == 10 and cfg.resample_each_epoch
        assert cfg.strategy is NegativeStrategy.UNIFORM
        assert cfg.pool_size == 100

    def test_invalid(self):
        with pytest.raises(ValueError):
            SamplerConfig(num_negatives=0)
        with pytest.raises(ValueError):
            SamplerConfig(strategy="hardest")


class TestBuildTriplets:
    """Test the triplet stream."""

    def test_count_and_validity(self, tiny_dataset):
        cfg = SamplerConfig(num_negatives=4, seed=1, batch_size=7)
        users, pos, neg = _collect(build_triplets(tiny_dataset, cfg))
        assert len(users) == tiny_dataset.num_positives * 4
        assert tiny_dataset.contains(users, pos).all()
        assert not tiny_dataset.contains(users, neg).any()

    def test_single_positive_user_gets_ten_triples(self):
        ds = ImplicitDataset.from_pairs([0], [3], 1, 50)
        users, pos, neg = _collect(build_triplets(ds, SamplerConfig(num_negatives=10)))
        assert len(users) == 10
        assert set(pos.tolist()) == {3}
        # negatives for one positive are distinct when possible
        assert len(set(neg.tolist())) == 10

    def test_single_unobserved_item_is_repeated(self, caplog):
        ds = ImplicitDataset.from_pairs([0] * 4, [0, 1, 2, 4], 1, 5)
        with caplog.at_level(logging.WARNING):
            _, _, neg = _collect(build_triplets(ds, SamplerConfig(num_negatives=10)))
        assert neg.tolist() == [3] * 40
        assert "with replacement" in caplog.text

    def test_user_without_unobserved_items_is_skipped(self, caplog):
        ds = ImplicitDataset.from_pairs([0, 0, 1], [0, 1, 0], 2, 2)
        with caplog.at_level(logging.WARNING):
            users, _, neg = _collect(build_triplets(ds, SamplerConfig(num_negatives=2)))
        assert set(users.tolist()) == {1}
        assert neg.tolist() == [1, 1]
        assert "no unobserved items" in caplog.text

    def test_same_seed_and_epoch_is_identical(self, small_dataset):
        cfg = SamplerConfig(num_negatives=3, seed=4, batch_size=50)
        a = _collect(build_triplets(small_dataset, cfg, epoch=2))
        b = _collect(build_triplets(small_dataset, cfg, epoch=2))
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_resampling_changes_negatives_between_epochs(self, make_dataset):
        ds = make_dataset(100, 200, 5, seed=1)
        cfg = SamplerConfig(num_negatives=5, seed=0)
        first = set(zip(*_collect(build_triplets(ds, cfg, epoch=1))))
        second = set(zip(*_collect(build_triplets(ds, cfg, epoch=2))))
        assert first != second

    def test_fixed_negatives_without_resampling(self, small_dataset):
        cfg = SamplerConfig(num_negatives=3, seed=0, resample_each_epoch=False)
        first = sorted(zip(*_collect(build_triplets(small_dataset, cfg, epoch=1))))
        second = sorted(zip(*_collect(build_triplets(small_dataset, cfg, epoch=5))))
        assert first == second

    def test_negatives_never_positive_exhaustively(self, make_dataset):
        for seed in range(20):
            ds = make_dataset(6, 8, 5, seed=seed)
            users, _, neg = _collect(build_triplets(ds, SamplerConfig(num_negatives=3, seed=seed)))
            assert not ds.contains(users, neg).any()

    def test_empty_training_set(self):
        with pytest.raises(ValueError, match="empty"):
            list(build_triplets(ImplicitDataset.empty(2, 3), SamplerConfig()))


class TestScoreSorted:
    """Test the hard-negative strategy."""

    def test_requires_params(self, tiny_dataset):
        cfg = SamplerConfig(strategy="score_sorted")
        with pytest.raises(ValueError, match="needs model parameters"):
            list(build_triplets(tiny_dataset, cfg))

    def test_negatives_come_from_top_scored_pool(self, small_dataset):
        params = init(40, 60, Hyperparams(dim=4, seed=3))
        cfg = SamplerConfig(num_negatives=2, strategy="score_sorted", pool_size=5, seed=0)
        users, _, neg = _collect(build_triplets(small_dataset, cfg, params=params))
        assert not small_dataset.contains(users, neg).any()

        scores = params.user_factors @ params.item_factors.T
        for user in range(40):
            unobserved = np.setdiff1d(np.arange(60), small_dataset.user_items(user))
            top = unobserved[np.argsort(-scores[user, unobserved], kind="stable")[:5]]
            assert set(neg[users == user].tolist()) <= set(top.tolist())


class TestBuildPoints:
    """Test the pointwise stream."""

    def test_labels_and_counts(self, tiny_dataset):
        cfg = SamplerConfig(num_negatives=2, seed=0, batch_size=8)
        batches = list(build_points(tiny_dataset, cfg))
        users = np.concatenate([b.users for b in batches])
        items = np.concatenate([b.items for b in batches])
        labels = np.concatenate([b.labels for b in batches])
        assert len(users) == tiny_dataset.num_positives * 3
        assert labels.sum() == tiny_dataset.num_positives
        assert tiny_dataset.contains(users[labels == 1], items[labels == 1]).all()
        assert not tiny_dataset.contains(users[labels == 0], items[labels == 0]).any()
