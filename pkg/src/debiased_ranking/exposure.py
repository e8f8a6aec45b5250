"""
Debiased Ranking - Exposure Mechanism.

Item popularity, the DPR exposure weights gamma, IPS propensity scores and the
iterative exposure update used to study feedback loops.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import pandas as pd

from .data.ratings import ImplicitDataset

logger = logging.getLogger(__name__)

DEFAULT_PROPENSITY_EXPONENT = 0.5
DEFAULT_PROPENSITY_FLOOR = 0.01
GAMMA_SOURCES = ("normalized", "raw_sum")
EXPOSURE_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class PopularityTable:
    """Per-item counts n_i, normalized popularity, popularity rank and tail flags."""

    counts: np.ndarray
    normalized: np.ndarray
    rank: np.ndarray
    tail_flag: np.ndarray

    @property
    def num_items(self) -> int:
        return len(self.counts)

    @classmethod
    def from_counts(cls, counts) -> "PopularityTable":
        counts = np.asarray(counts, dtype=np.int64)
        num_items = len(counts)
        if num_items == 0:
            raise ValueError("popularity needs at least one item")
        if (counts < 0).any():
            raise ValueError("item counts must be non-negative")

        top = counts.max()
        normalized = counts / top if top > 0 else np.zeros(num_items, dtype=np.float64)

        # most popular first, ties by ascending item id
        order = np.lexsort((np.arange(num_items), -counts))
        rank = np.empty(num_items, dtype=np.int64)
        rank[order] = np.arange(1, num_items + 1)

        num_tail = (4 * num_items) // 5
        tail_flag = rank > num_items - num_tail
        return cls(counts=counts, normalized=normalized, rank=rank, tail_flag=tail_flag)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "item_id": np.arange(self.num_items),
                "count": self.counts,
                "normalized": self.normalized,
                "rank": self.rank,
                "tail_flag": self.tail_flag,
            }
        )


@dataclass(frozen=True, eq=False)
class GammaTable:
    """DPR exposure weights gamma_i for one alpha."""

    alpha: float
    gamma: np.ndarray
    source: str = "normalized"

    @property
    def inverse(self) -> np.ndarray:
        return 1.0 / self.gamma


@dataclass(frozen=True, eq=False)
class PropensityTable:
    """Clipped IPS propensities for positive and negative feedback."""

    theta_pos: np.ndarray
    theta_neg: np.ndarray
    exponent: float = DEFAULT_PROPENSITY_EXPONENT
    floor: float = DEFAULT_PROPENSITY_FLOOR


@dataclass(frozen=True, eq=False)
class ExposureVector:
    """Probability O(i) of each item being exposed; sums to one."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1 or len(probs) == 0:
            raise ValueError("exposure must be a non-empty vector")
        if (probs < 0).any() or not np.isfinite(probs).all():
            raise ValueError("exposure probabilities must be finite and non-negative")
        if abs(probs.sum() - 1.0) > EXPOSURE_TOLERANCE:
            raise ValueError(f"exposure probabilities sum to {probs.sum()}, expected 1")
        object.__setattr__(self, "probs", probs)

    @property
    def num_items(self) -> int:
        return len(self.probs)

    @classmethod
    def uniform(cls, num_items: int) -> "ExposureVector":
        return cls(np.full(num_items, 1.0 / num_items))

    @classmethod
    def from_counts(cls, counts) -> "ExposureVector":
        """Share of positive interactions per item."""
        counts = np.asarray(counts, dtype=np.float64)
        total = counts.sum()
        if total <= 0:
            raise ValueError("cannot estimate exposure from zero interactions")
        return cls(counts / total)

    @classmethod
    def zipf(
        cls, num_items: int, exponent: float = 1.0, seed: Optional[int] = None
    ) -> "ExposureVector":
        """Zipf-shaped exposure; with a seed the popularity order is a random permutation."""
        weights = 1.0 / np.arange(1, num_items + 1, dtype=np.float64) ** exponent
        if seed is not None:
            weights = weights[np.random.default_rng(seed).permutation(num_items)]
        return cls(weights / weights.sum())


def popularity(ds: ImplicitDataset) -> PopularityTable:
    """Popularity table of a dataset's item counts."""
    if ds.num_items == 0:
        raise ValueError("dataset has no items")
    return PopularityTable.from_counts(ds.item_counts)


def gamma(pop: PopularityTable, alpha: float, source: str = "normalized") -> GammaTable:
    """
    DPR exposure weights gamma_i = (1 + p_i) ** alpha.

    With source="normalized" p_i = n_i / max_j n_j, which bounds gamma in
    [1, 2 ** alpha]. source="raw_sum" uses the raw count n_i instead.
    """
    if alpha < 0 or not np.isfinite(alpha):
        raise ValueError(f"alpha must be a finite non-negative number, got {alpha}")
    if source not in GAMMA_SOURCES:
        raise ValueError(f"gamma source must be one of {GAMMA_SOURCES}, got {source!r}")
    base = pop.normalized if source == "normalized" else pop.counts.astype(np.float64)
    return GammaTable(alpha=float(alpha), gamma=(1.0 + base) ** alpha, source=source)


def propensities(
    pop: PopularityTable,
    exponent: float = DEFAULT_PROPENSITY_EXPONENT,
    floor: float = DEFAULT_PROPENSITY_FLOOR,
) -> PropensityTable:
    """theta+ = p ** exponent and theta- = (1 - p) ** exponent, clipped to [floor, 1]."""
    if exponent <= 0:
        raise ValueError(f"propensity exponent must be positive, got {exponent}")
    if not 0.0 < floor < 1.0:
        raise ValueError(f"propensity floor must lie in (0, 1), got {floor}")
    p = pop.normalized
    theta_pos = np.clip(p**exponent, floor, 1.0)
    theta_neg = np.clip((1.0 - p) ** exponent, floor, 1.0)
    return PropensityTable(
        theta_pos=theta_pos, theta_neg=theta_neg, exponent=exponent, floor=floor
    )


def exposure_step(relevance: np.ndarray, prev: ExposureVector) -> ExposureVector:
    """One feedback-loop update: O_t(i) proportional to sum_u R[u, i] * O_{t-1}(i)."""
    relevance = np.asarray(relevance, dtype=np.float64)
    if relevance.ndim != 2 or relevance.shape[1] != prev.num_items:
        raise ValueError(
            f"relevance must be an M x {prev.num_items} matrix, got {relevance.shape}"
        )
    if (relevance < 0).any() or (relevance > 1).any():
        raise ValueError("relevance entries must lie in [0, 1]")

    mass = relevance.sum(axis=0) * prev.probs
    total = mass.sum()
    if total <= 0:
        raise ValueError("degenerate exposure: every item has zero relevance mass")
    probs = mass / total
    return ExposureVector(probs / probs.sum())


def iterate_exposure(
    relevance: np.ndarray, initial: ExposureVector, steps: int
) -> List[ExposureVector]:
    """Trajectory [O_0, O_1, ..., O_steps] of repeated exposure_step."""
    if steps < 0:
        raise ValueError("steps must be non-negative")
    trajectory = [initial]
    for _ in range(steps):
        trajectory.append(exposure_step(relevance, trajectory[-1]))
    return trajectory


def exposure_distribution(ds: ImplicitDataset, num_groups: int) -> np.ndarray:
    """
    Share of positive interactions per popularity group.

    Items are ordered from most to least popular and cut into `num_groups`
    equal-size buckets; the returned shares sum to one.
    """
    if num_groups < 1:
        raise ValueError("num_groups must be at least 1")
    pop = popularity(ds)
    order = np.argsort(pop.rank)
    total = pop.counts.sum()
    if total == 0:
        logger.warning("Dataset has no positives; exposure shares are all zero")
        return np.zeros(num_groups)
    groups = np.array_split(order, num_groups)
    return np.array([pop.counts[group].sum() / total for group in groups])


def write_popularity_csv(pop: PopularityTable, path: Union[str, Path]) -> Path:
    path = Path(path)
    pop.to_frame().to_csv(path, index=False)
    return path


def write_group_shares_csv(shares: np.ndarray, path: Union[str, Path]) -> Path:
    path = Path(path)
    pd.DataFrame({"group": np.arange(1, len(shares) + 1), "share": shares}).to_csv(
        path, index=False
    )
    return path
