"""
Debiased Ranking - Ranking Evaluation.

Leave-one-out Recall@K and NDCG@K plus the popularity-bias metrics ARP@K and
TAP@K, under full-ranking and sampled-99 protocols.
"""

import logging
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .data.ratings import ImplicitDataset
from .data.splits import SplitDataset
from .exposure import PopularityTable
from .model import MFParams

logger = logging.getLogger(__name__)

DEFAULT_K = 5
DEFAULT_NUM_SAMPLED = 99
SCORE_BLOCK_USERS = 1024

# A params snapshot or a precomputed M x N score matrix.
Scorer = Union[MFParams, np.ndarray]


class Protocol(str, Enum):
    FULL_RANK = "full_rank"
    SAMPLED99 = "sampled99"


@dataclass(frozen=True)
class EvalConfig:
    k: int = DEFAULT_K
    protocol: Protocol = Protocol.FULL_RANK
    exclude_train: bool = True
    seed: int = 0
    num_sampled: int = DEFAULT_NUM_SAMPLED

    def __post_init__(self):
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        if self.k < 1:
            raise ValueError(f"k must be at least 1, got {self.k}")
        if self.num_sampled < 1:
            raise ValueError("num_sampled must be at least 1")


@dataclass(frozen=True)
class EvalReport:
    """User-averaged metrics at one cut-off."""

    recall: float
    ndcg: float
    arp: float
    tap: float
    users_evaluated: int

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def rank_topk(
    scores: np.ndarray,
    candidates: np.ndarray,
    k: int,
    exclude: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Top-k candidates by score, ties broken by ascending item id.

    Args:
        scores: Score of every item for one user (indexed by item id)
        candidates: Item ids eligible for the list
        k: List length
        exclude: Item ids to drop from the candidates (e.g. train positives)

    Returns:
        At most k item ids, best first
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    if len(candidates) == 0:
        raise ValueError("candidates must not be empty")
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    if exclude is not None and len(exclude):
        candidates = candidates[~np.isin(candidates, exclude)]
    order = np.lexsort((candidates, -scores[candidates]))
    return candidates[order[:k]]


def recall_at_k(ranked: Sequence[int], test_item: int, k: int) -> float:
    return 1.0 if test_item in np.asarray(ranked)[:k] else 0.0


def ndcg_at_k(ranked: Sequence[int], test_item: int, k: int) -> float:
    """Single-relevant-item NDCG: 1 / log2(rank + 1) for a hit at 1-based rank."""
    hits = np.flatnonzero(np.asarray(ranked)[:k] == test_item)
    if len(hits) == 0:
        return 0.0
    return float(1.0 / np.log2(hits[0] + 2))


def _list_mean(lists: Sequence[np.ndarray], per_item: np.ndarray, k: Optional[int]) -> float:
    means = [per_item[np.asarray(r, dtype=np.int64)[:k]].mean() for r in lists if len(r)]
    if not means:
        raise ValueError("no non-empty recommendation lists")
    return float(np.mean(means))


def arp_at_k(
    lists: Sequence[np.ndarray], pop: PopularityTable, k: Optional[int] = None
) -> float:
    """Average popularity rank: mean over users of the mean rank of their list."""
    return _list_mean(lists, pop.rank.astype(np.float64), k)


def tap_at_k(
    lists: Sequence[np.ndarray], pop: PopularityTable, k: Optional[int] = None
) -> float:
    """Tail percentage: mean over users of the share of their list in the bottom 80%."""
    return _list_mean(lists, pop.tail_flag.astype(np.float64), k)


def _score_rows(model: Scorer, users: np.ndarray):
    """Yield (user, score row) pairs, computing MF scores in user blocks."""
    if isinstance(model, np.ndarray):
        for user in users:
            yield int(user), model[user]
        return
    for start in range(0, len(users), SCORE_BLOCK_USERS):
        block = users[start : start + SCORE_BLOCK_USERS]
        table = model.user_factors[block] @ model.item_factors.T
        for user, row in zip(block, table):
            yield int(user), row


def _num_items(model: Scorer) -> int:
    return model.shape[1] if isinstance(model, np.ndarray) else model.num_items


def recommend_topk(
    model: Scorer,
    users: np.ndarray,
    k: int,
    known: Optional[ImplicitDataset] = None,
) -> List[np.ndarray]:
    """
    Full-ranking top-k lists for the given users.

    Items a user already has in `known` are skipped, as are items scored -inf.
    """
    all_items = np.arange(_num_items(model))
    lists = []
    for user, row in _score_rows(model, np.asarray(users, dtype=np.int64)):
        candidates = all_items[row > -np.inf]
        exclude = known.user_items(user) if known is not None else None
        if len(candidates) == 0:
            lists.append(candidates)
            continue
        lists.append(rank_topk(row, candidates, k, exclude))
    return lists


def evaluate(
    model: Scorer,
    split: SplitDataset,
    cfg: EvalConfig,
    pop: PopularityTable,
    which: str = "test",
) -> EvalReport:
    """
    Evaluate a model on the held-out items of `which` ("test" or "validation").

    full_rank ranks every item except the user's train positives (when
    exclude_train); sampled99 ranks the held-out item against num_sampled
    unobserved items drawn with a generator seeded by cfg.seed.
    """
    held = split.held_out(which)
    users = split.eval_users(which)
    if len(users) == 0:
        raise ValueError(f"no evaluable users in the {which} split")
    if _num_items(model) != split.num_items:
        raise ValueError("model and split disagree on the number of items")

    rng = np.random.default_rng(cfg.seed)
    all_items = np.arange(split.num_items)
    recalls, ndcgs, lists = [], [], []

    for user, row in _score_rows(model, users):
        target = int(held[user])
        if cfg.protocol is Protocol.FULL_RANK:
            exclude = split.train.user_items(user) if cfg.exclude_train else None
            ranked = rank_topk(row, all_items, cfg.k, exclude)
        else:
            pool = np.setdiff1d(all_items, split.known_positives(user), assume_unique=True)
            size = min(cfg.num_sampled, len(pool))
            sampled = rng.choice(pool, size=size, replace=False) if size else pool
            ranked = rank_topk(row, np.append(sampled, target), cfg.k)
        recalls.append(recall_at_k(ranked, target, cfg.k))
        ndcgs.append(ndcg_at_k(ranked, target, cfg.k))
        lists.append(ranked)

    report = EvalReport(
        recall=float(np.mean(recalls)),
        ndcg=float(np.mean(ndcgs)),
        arp=arp_at_k(lists, pop),
        tap=tap_at_k(lists, pop),
        users_evaluated=len(users),
    )
    logger.debug(
        f"{which} {cfg.protocol.value}@{cfg.k}: recall={report.recall:.4f} "
        f"ndcg={report.ndcg:.4f} arp={report.arp:.2f} tap={report.tap:.4f}"
    )
    return report
