"""
Shared test fixtures and configuration for the debiased ranking tests.

This module contains pytest fixtures that are shared across all test modules.
"""

import os
from unittest.mock import patch

import numpy as np
import pytest

from src.debiased_ranking.data.ratings import ImplicitDataset
from src.debiased_ranking.data.splits import leave_one_out_split
from src.debiased_ranking.model import Hyperparams, MFParams


@pytest.fixture
def mock_env_vars(tmp_path):
    """Point every environment-driven default at the test sandbox."""
    with patch.dict(
        os.environ,
        {
            "RANKING_OUTPUT_ROOT": str(tmp_path / "runs"),
            "RANKING_LOG_LEVEL": "DEBUG",
            "RANKING_COAT_URL": "https://test.example.org/coat.zip",
            "RANKING_DOWNLOAD_TIMEOUT": "5.0",
        },
    ):
        yield


@pytest.fixture
def tiny_dataset():
    """5 users x 10 items with a hand-written interaction pattern."""
    pairs = [
        (0, 0), (0, 1), (0, 2),
        (1, 0), (1, 3),
        (2, 0), (2, 1), (2, 4), (2, 5),
        (3, 6),
        (4, 0), (4, 1), (4, 7), (4, 8), (4, 9),
    ]  # fmt: skip
    users, items = zip(*pairs)
    return ImplicitDataset.from_pairs(users, items, 5, 10)


def random_dataset(num_users, num_items, per_user, seed=0):
    rng = np.random.default_rng(seed)
    users, items = [], []
    for user in range(num_users):
        chosen = rng.choice(num_items, size=per_user, replace=False)
        users.extend([user] * per_user)
        items.extend(chosen.tolist())
    return ImplicitDataset.from_pairs(users, items, num_users, num_items)


@pytest.fixture
def make_dataset():
    """Factory for random datasets with a fixed number of positives per user."""
    return random_dataset


@pytest.fixture
def small_dataset():
    """40 users x 60 items, 8 positives each."""
    return random_dataset(40, 60, 8, seed=7)


@pytest.fixture
def small_split(small_dataset):
    return leave_one_out_split(small_dataset, seed=3)


@pytest.fixture
def small_hp():
    return Hyperparams(dim=8, lr=0.01, l2=1e-4, batch_size=256, num_negatives=3, epochs=3)


@pytest.fixture
def random_params():
    """Parameters with scale ~0.5 so gradients are far from zero."""

    def make(num_users=6, num_items=9, dim=4, seed=0):
        rng = np.random.default_rng(seed)
        return MFParams(
            user_factors=rng.normal(0.0, 0.5, size=(num_users, dim)),
            item_factors=rng.normal(0.0, 0.5, size=(num_items, dim)),
        )

    return make


@pytest.fixture
def ratings_file(tmp_path):
    """A small tab-separated rating log with one malformed line."""
    path = tmp_path / "ratings.tsv"
    lines = []
    rng = np.random.default_rng(11)
    for user in range(20):
        for item in rng.choice(30, size=6, replace=False):
            lines.append(f"{100 + user}\t{500 + item}\t{int(rng.integers(1, 6))}")
    lines.insert(5, "not\ta\trow")
    path.write_text("\n".join(lines) + "\n")
    return path
