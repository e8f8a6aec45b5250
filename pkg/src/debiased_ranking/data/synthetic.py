"""
Debiased Ranking - Synthetic Exposure-biased Data.

Ground-truth relevance from a low-rank model, a Zipf exposure mechanism and
observations S = R * O, so debiasing can be checked against known relevance.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ..exposure import ExposureVector
from .ratings import ImplicitDataset
from .splits import NO_ITEM, SplitDataset

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SyntheticData:
    """True relevance probabilities, the exposure vector and the observed positives."""

    relevance: np.ndarray
    exposure: ExposureVector
    observed: ImplicitDataset


def make_synthetic(
    num_users: int = 200,
    num_items: int = 500,
    rank: int = 8,
    noise: float = 0.1,
    zipf_exponent: float = 1.0,
    density: float = 0.05,
    seed: int = 0,
) -> SyntheticData:
    """
    Sample an MNAR dataset.

    P(R_ui = 1) = sigmoid(<a_u, b_i> + noise), exposure O(i) follows a Zipf law
    over a random item order, and S_ui ~ Bernoulli(c * P(R_ui = 1) * O(i) / max O)
    with c chosen so the expected density matches `density`.
    """
    if num_users < 1 or num_items < 2 or rank < 1:
        raise ValueError("need at least one user, two items and rank 1")
    if not 0.0 < density < 1.0:
        raise ValueError(f"density must lie in (0, 1), got {density}")
    if noise < 0:
        raise ValueError("noise must be non-negative")

    rng = np.random.default_rng(seed)
    user_factors = rng.normal(0.0, 1.0, size=(num_users, rank)) / np.sqrt(rank)
    item_factors = rng.normal(0.0, 1.0, size=(num_items, rank))
    logits = user_factors @ item_factors.T + noise * rng.normal(size=(num_users, num_items))
    relevance = expit(logits)

    exposure = ExposureVector.zipf(num_items, zipf_exponent, seed=int(rng.integers(2**31)))
    observe = relevance * (exposure.probs / exposure.probs.max())
    scale = density * num_users * num_items / observe.sum()
    observe = np.clip(scale * observe, 0.0, 1.0)

    users, items = np.nonzero(rng.random((num_users, num_items)) < observe)
    observed = ImplicitDataset.from_pairs(users, items, num_users, num_items)
    logger.info(
        f"Synthetic data: {num_users} users x {num_items} items, "
        f"{observed.num_positives} observed positives (zipf exponent {zipf_exponent})"
    )
    return SyntheticData(relevance=relevance, exposure=exposure, observed=observed)


def relevance_split(data: SyntheticData, seed: int = 0) -> SplitDataset:
    """
    Train on every observed positive; hold out each user's most relevant
    unobserved item for test and the second most relevant for validation.

    Ties in true relevance are broken by ascending item id.
    """
    observed = data.observed
    validation = np.full(observed.num_users, NO_ITEM, dtype=np.int64)
    test = np.full(observed.num_users, NO_ITEM, dtype=np.int64)
    skipped = 0
    for user in range(observed.num_users):
        candidates = np.setdiff1d(
            np.arange(observed.num_items), observed.user_items(user), assume_unique=True
        )
        if len(candidates) < 2:
            skipped += 1
            continue
        order = np.lexsort((candidates, -data.relevance[user, candidates]))
        test[user], validation[user] = candidates[order[0]], candidates[order[1]]
    return SplitDataset(
        train=observed, validation=validation, test=test, seed=seed, skipped_users=skipped
    )
