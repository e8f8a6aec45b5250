"""
Debiased Ranking - Negative Sampling.

Builds shuffled triplet and pointwise batch streams with per-epoch
resampling of negatives.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Optional, Tuple

import numpy as np

from .data.ratings import ImplicitDataset
from .losses import PointBatch, TripletBatch
from .model import DEFAULT_BATCH_SIZE, DEFAULT_NEGATIVES, MFParams, score_matrix

logger = logging.getLogger(__name__)

DEFAULT_POOL_SIZE = 100
MAX_REJECTION_ROUNDS = 50


class NegativeStrategy(str, Enum):
    UNIFORM = "uniform"
    SCORE_SORTED = "score_sorted"


@dataclass(frozen=True)
class SamplerConfig:
    """How negatives are drawn for each train positive."""

    num_negatives: int = DEFAULT_NEGATIVES
    resample_each_epoch: bool = True
    strategy: NegativeStrategy = NegativeStrategy.UNIFORM
    seed: int = 0
    pool_size: int = DEFAULT_POOL_SIZE
    descending: bool = True
    batch_size: int = DEFAULT_BATCH_SIZE

    def __post_init__(self):
        object.__setattr__(self, "strategy", NegativeStrategy(self.strategy))
        if self.num_negatives < 1:
            raise ValueError("num_negatives must be at least 1")
        if self.pool_size < 1 or self.batch_size < 1:
            raise ValueError("pool_size and batch_size must be at least 1")


def _row_duplicates(neg: np.ndarray) -> np.ndarray:
    """Mark every repeat (after the first) of a value within each row."""
    order = np.argsort(neg, axis=1, kind="stable")
    ordered = np.take_along_axis(neg, order, axis=1)
    repeat = np.zeros(neg.shape, dtype=bool)
    repeat[:, 1:] = ordered[:, 1:] == ordered[:, :-1]
    marks = np.zeros(neg.shape, dtype=bool)
    np.put_along_axis(marks, order, repeat, axis=1)
    return marks


def _complement(train: ImplicitDataset, user: int) -> np.ndarray:
    return np.setdiff1d(np.arange(train.num_items), train.user_items(user), assume_unique=True)


def _explicit_rows(
    rng: np.random.Generator,
    train: ImplicitDataset,
    users: np.ndarray,
    rows: np.ndarray,
    neg: np.ndarray,
    pools: Optional[dict] = None,
) -> None:
    """Redraw whole rows from each user's explicit candidate set."""
    width = neg.shape[1]
    for row in rows:
        user = int(users[row])
        candidates = pools[user] if pools is not None else _complement(train, user)
        neg[row] = rng.choice(candidates, size=width, replace=len(candidates) < width)


def _uniform_negatives(
    rng: np.random.Generator, train: ImplicitDataset, users: np.ndarray, width: int
) -> np.ndarray:
    """Distinct unobserved items per row, by rejection with an explicit fallback."""
    neg = rng.integers(0, train.num_items, size=(len(users), width))
    room = train.num_items - train.user_degrees[users]
    crowded = room < width
    grid_users = np.broadcast_to(users[:, None], neg.shape)

    for _ in range(MAX_REJECTION_ROUNDS):
        bad = train.contains(grid_users, neg) | _row_duplicates(neg)
        bad[crowded] = False
        if not bad.any():
            break
        neg[bad] = rng.integers(0, train.num_items, size=int(bad.sum()))
    else:
        bad = train.contains(grid_users, neg) | _row_duplicates(neg)
        bad[crowded] = False
        _explicit_rows(rng, train, users, np.flatnonzero(bad.any(axis=1)), neg)

    _explicit_rows(rng, train, users, np.flatnonzero(crowded), neg)
    return neg


def _score_sorted_negatives(
    rng: np.random.Generator,
    train: ImplicitDataset,
    users: np.ndarray,
    width: int,
    params: MFParams,
    cfg: SamplerConfig,
) -> np.ndarray:
    """Negatives drawn uniformly from each user's top-q unobserved items by score."""
    scores = score_matrix(params)
    pools = {}
    for user in np.unique(users):
        candidates = _complement(train, int(user))
        if len(candidates) == 0:
            continue
        user_scores = scores[user, candidates]
        key = -user_scores if cfg.descending else user_scores
        order = np.lexsort((candidates, key))
        pools[int(user)] = candidates[order[: cfg.pool_size]]

    neg = np.zeros((len(users), width), dtype=np.int64)
    _explicit_rows(rng, train, users, np.arange(len(users)), neg, pools)
    return neg


def _draw(
    train: ImplicitDataset,
    cfg: SamplerConfig,
    epoch: int,
    params: Optional[MFParams],
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Positives (users, items) and a num_negatives-wide negative matrix."""
    if train.num_positives == 0:
        raise ValueError("cannot sample from an empty training set")
    if cfg.strategy is NegativeStrategy.SCORE_SORTED and params is None:
        raise ValueError("score_sorted sampling needs model parameters")

    users, items = train.pairs()
    room = train.num_items - train.user_degrees
    full = np.flatnonzero(room == 0)
    if len(full):
        logger.warning(
            f"{len(full)} users have no unobserved items; their positives are skipped"
        )
        keep = room[users] > 0
        users, items = users[keep], items[keep]
    short = np.flatnonzero((room > 0) & (room < cfg.num_negatives))
    if len(short):
        logger.warning(
            f"{len(short)} users have fewer than {cfg.num_negatives} unobserved items; "
            f"sampling their negatives with replacement"
        )

    neg_epoch = epoch if cfg.resample_each_epoch else 0
    rng = np.random.default_rng([cfg.seed, neg_epoch])
    if cfg.strategy is NegativeStrategy.UNIFORM:
        neg = _uniform_negatives(rng, train, users, cfg.num_negatives)
    else:
        neg = _score_sorted_negatives(rng, train, users, cfg.num_negatives, params, cfg)
    return users, items, neg


def _batches(total: int, cfg: SamplerConfig, epoch: int, batch_size: Optional[int]):
    size = batch_size or cfg.batch_size
    order = np.random.default_rng([cfg.seed, epoch, 1]).permutation(total)
    for start in range(0, total, size):
        yield order[start : start + size]


def build_triplets(
    train: ImplicitDataset,
    cfg: SamplerConfig,
    params: Optional[MFParams] = None,
    epoch: int = 0,
    batch_size: Optional[int] = None,
) -> Iterator[TripletBatch]:
    """
    Yield shuffled triplet batches: num_negatives triples per train positive.

    The stream is deterministic given (cfg.seed, epoch); with
    resample_each_epoch=False the negatives stay those of epoch 0.
    """
    users, items, neg = _draw(train, cfg, epoch, params)
    width = neg.shape[1]
    flat_users = np.repeat(users, width)
    flat_pos = np.repeat(items, width)
    flat_neg = neg.ravel()
    logger.debug(f"Epoch {epoch}: {len(flat_users)} triples from {len(users)} positives")
    for index in _batches(len(flat_users), cfg, epoch, batch_size):
        yield TripletBatch(
            users=flat_users[index], pos_items=flat_pos[index], neg_items=flat_neg[index]
        )


def build_points(
    train: ImplicitDataset,
    cfg: SamplerConfig,
    params: Optional[MFParams] = None,
    epoch: int = 0,
    batch_size: Optional[int] = None,
) -> Iterator[PointBatch]:
    """Yield shuffled pointwise batches: all positives plus sampled negatives labelled 0."""
    users, items, neg = _draw(train, cfg, epoch, params)
    width = neg.shape[1]
    all_users = np.concatenate([users, np.repeat(users, width)])
    all_items = np.concatenate([items, neg.ravel()])
    labels = np.concatenate(
        [np.ones(len(users), dtype=np.int8), np.zeros(len(users) * width, dtype=np.int8)]
    )
    for index in _batches(len(all_users), cfg, epoch, batch_size):
        yield PointBatch(users=all_users[index], items=all_items[index], labels=labels[index])
