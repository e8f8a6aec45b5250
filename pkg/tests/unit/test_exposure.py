"""
Unit tests for popularity, exposure weights, propensities and the exposure update.
"""

import numpy as np
import pandas as pd
import pytest

from src.debiased_ranking.data.ratings import ImplicitDataset
from src.debiased_ranking.exposure import (
    ExposureVector,
    PopularityTable,
    exposure_distribution,
    exposure_step,
    gamma,
    iterate_exposure,
    popularity,
    propensities,
    write_group_shares_csv,
    write_popularity_csv,
)

pytestmark = pytest.mark.unit


class TestPopularity:
    """Test popularity ranks and the tail set."""

    def test_rank_and_tail(self, tiny_dataset):
        pop = popularity(tiny_dataset)
        assert pop.rank[0] == 1
        assert pop.rank[1] == 2
        # ties broken by ascending id
        assert pop.rank[2:].tolist() == list(range(3, 11))
        # N=10: the tail is the last 8 ranks
        assert pop.tail_flag.tolist() == [False, False] + [True] * 8
        assert pop.normalized[0] == 1.0
        assert pop.normalized[1] == pytest.approx(0.75)

    def test_all_zero_counts(self):
        pop = PopularityTable.from_counts([0, 0, 0, 0, 0])
        assert np.all(pop.normalized == 0.0)
        assert pop.rank.tolist() == [1, 2, 3, 4, 5]
        assert pop.tail_flag.sum() == 4

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            PopularityTable.from_counts([1, -1])


class TestGamma:
    """Test the exposure weights."""

    def test_alpha_zero_is_all_ones(self, tiny_dataset):
        table = gamma(popularity(tiny_dataset), 0.0)
        assert np.all(table.gamma == 1.0)

    def test_bounds_for_alpha_two(self):
        """gamma in [1, 4] and 1/gamma in [0.25, 1] for any count vector."""
        rng = np.random.default_rng(0)
        for _ in range(1000):
            size = int(rng.integers(1, 50))
            counts = rng.integers(0, 1000, size=size)
            table = gamma(PopularityTable.from_counts(counts), 2.0)
            assert table.gamma.min() >= 1.0 and table.gamma.max() <= 4.0
            assert table.inverse.min() >= 0.25 and table.inverse.max() <= 1.0

    def test_most_popular_item_gets_two_to_the_alpha(self, tiny_dataset):
        table = gamma(popularity(tiny_dataset), 3.0)
        assert table.gamma[0] == pytest.approx(8.0)
        assert table.gamma[1] == pytest.approx(1.75**3)

    def test_raw_sum_source_is_unbounded(self, tiny_dataset):
        table = gamma(popularity(tiny_dataset), 2.0, source="raw_sum")
        assert table.gamma[0] == pytest.approx(25.0)

    def test_negative_alpha(self, tiny_dataset):
        with pytest.raises(ValueError, match="alpha"):
            gamma(popularity(tiny_dataset), -1.0)

    def test_unknown_source(self, tiny_dataset):
        with pytest.raises(ValueError, match="gamma source"):
            gamma(popularity(tiny_dataset), 1.0, source="log")


class TestPropensities:
    """Test clipped propensities."""

    def test_values_and_clipping(self):
        pop = PopularityTable.from_counts([100, 25, 0])
        theta = propensities(pop)
        assert theta.theta_pos.tolist() == pytest.approx([1.0, 0.5, 0.01])
        assert theta.theta_neg.tolist() == pytest.approx([0.01, 0.75**0.5, 1.0])

    def test_invalid_floor(self):
        pop = PopularityTable.from_counts([1, 2])
        with pytest.raises(ValueError, match="floor"):
            propensities(pop, floor=0.0)


class TestExposureStep:
    """Test the iterative exposure update."""

    def test_uniform_relevance_is_a_fixed_point(self):
        prev = ExposureVector.zipf(50, 1.2, seed=3)
        nxt = exposure_step(np.full((20, 50), 0.5), prev)
        assert np.max(np.abs(nxt.probs - prev.probs)) <= 1e-12

    def test_concentrated_relevance_grows_monotonically(self):
        relevance = np.full((10, 8), 0.2)
        relevance[:, 3] = 0.9
        trajectory = iterate_exposure(relevance, ExposureVector.uniform(8), 20)
        shares = [o.probs[3] for o in trajectory]
        assert len(shares) == 21
        assert all(b > a for a, b in zip(shares, shares[1:]))
        for o in trajectory:
            assert abs(o.probs.sum() - 1.0) <= 1e-9

    def test_zero_relevance_is_degenerate(self):
        with pytest.raises(ValueError, match="degenerate exposure"):
            exposure_step(np.zeros((3, 4)), ExposureVector.uniform(4))

    def test_relevance_outside_unit_interval(self):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            exposure_step(np.full((2, 3), 1.5), ExposureVector.uniform(3))

    def test_exposure_vector_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum to"):
            ExposureVector(np.array([0.5, 0.6]))

    def test_from_counts(self):
        vector = ExposureVector.from_counts([1, 3])
        assert vector.probs.tolist() == pytest.approx([0.25, 0.75])


class TestExposureDistribution:
    """Test group shares and the CSV writers."""

    def test_shares_sum_to_one(self, tiny_dataset, tmp_path):
        shares = exposure_distribution(tiny_dataset, 5)
        assert shares.sum() == pytest.approx(1.0)
        # the top group holds items 0 and 1: 7 of 15 positives
        assert shares[0] == pytest.approx(7 / 15)

        write_group_shares_csv(shares, tmp_path / "groups.csv")
        frame = pd.read_csv(tmp_path / "groups.csv")
        assert frame.columns.tolist() == ["group", "share"]
        assert len(frame) == 5

    def test_zipf_counts_give_strictly_decreasing_shares(self):
        num_items = 20
        counts = (200 / np.arange(1, num_items + 1)).astype(int)
        item_ids = np.random.default_rng(0).permutation(num_items)
        users = np.concatenate([np.arange(c) for c in counts])
        items = np.repeat(item_ids, counts)
        ds = ImplicitDataset.from_pairs(users, items, 200, num_items)

        shares = exposure_distribution(ds, 4)
        assert shares.sum() == pytest.approx(1.0)
        assert np.all(np.diff(shares) < 0)

    def test_empty_dataset_warns_and_returns_zeros(self):
        shares = exposure_distribution(ImplicitDataset.empty(2, 4), 2)
        assert shares.tolist() == [0.0, 0.0]

    def test_popularity_csv(self, tiny_dataset, tmp_path):
        write_popularity_csv(popularity(tiny_dataset), tmp_path / "pop.csv")
        frame = pd.read_csv(tmp_path / "pop.csv")
        assert frame.columns.tolist() == ["item_id", "count", "normalized", "rank", "tail_flag"]
        assert frame["count"].sum() == 15
