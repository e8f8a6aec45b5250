"""
Debiased Ranking - Feedback Loop Simulation.

Seeds a random-exposure dataset, then repeatedly trains a recommender on the
accumulated interactions, shows every user a top-10 slate and lets them accept
two slate items uniformly at random.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .data.ratings import ImplicitDataset
from .evaluation import recommend_topk
from .exposure import popularity
from .model import Hyperparams, score_matrix
from .training import Trainer

logger = logging.getLogger(__name__)

DEFAULT_SIM_EPOCHS = 10
DEFAULT_SIM_LR = 1e-2
MAX_REPAIR_ROUNDS = 1000

# (dataset, generation, rng) -> M x N score matrix; -inf marks items never to recommend.
Recommender = Callable[[ImplicitDataset, int, np.random.Generator], np.ndarray]


def _default_sim_hp() -> Hyperparams:
    return Hyperparams(lr=DEFAULT_SIM_LR, epochs=DEFAULT_SIM_EPOCHS)


@dataclass(frozen=True)
class SimConfig:
    num_users: int = 200
    num_items: int = 500
    init_items_per_user: int = 20
    init_users_per_item: int = 20
    accept_k: int = 2
    rec_top: int = 10
    metric_k: int = 30
    loops: int = 50
    epochs_per_loop: int = DEFAULT_SIM_EPOCHS
    seed: int = 0
    hp: Hyperparams = field(default_factory=_default_sim_hp)

    def __post_init__(self):
        if self.num_users < 1 or self.num_items < 1:
            raise ValueError("num_users and num_items must be positive")
        if not 1 <= self.accept_k <= self.rec_top:
            raise ValueError(
                f"accept_k must lie in [1, rec_top={self.rec_top}], got {self.accept_k}"
            )
        if self.metric_k < 1 or self.loops < 0 or self.epochs_per_loop < 1:
            raise ValueError("metric_k and epochs_per_loop must be positive, loops non-negative")
        if not 1 <= self.init_items_per_user <= self.num_items:
            raise ValueError(
                f"init_items_per_user must lie in [1, {self.num_items}], "
                f"got {self.init_items_per_user}"
            )
        if not 1 <= self.init_users_per_item <= self.num_users:
            raise ValueError(
                f"init_users_per_item must lie in [1, {self.num_users}], "
                f"got {self.init_users_per_item}"
            )

    @property
    def method(self) -> str:
        return self.hp.loss_kind.value


@dataclass(frozen=True)
class LoopRecord:
    loop: int
    new_interactions: int
    cumulative: int
    total_interactions: int
    tap: float
    arp: float


@dataclass
class LoopState:
    """Simulation progress: current generation, accumulated data and per-loop records."""

    generation: int
    dataset: ImplicitDataset
    initial_interactions: int
    records: List[LoopRecord] = field(default_factory=list)

    @property
    def cumulative(self) -> int:
        return self.records[-1].cumulative if self.records else 0

    def to_frame(self) -> pd.DataFrame:
        columns = ["loop", "new", "cumulative", "total", "tap", "arp"]
        rows = [
            (r.loop, r.new_interactions, r.cumulative, r.total_interactions, r.tap, r.arp)
            for r in self.records
        ]
        return pd.DataFrame(rows, columns=columns)


class SimulationDiverged(FloatingPointError):
    """Training diverged mid-simulation; `state` holds the loops completed so far."""

    def __init__(self, message: str, state: LoopState):
        super().__init__(message)
        self.state = state


def gen_initial(cfg: SimConfig) -> ImplicitDataset:
    """
    Random bipartite graph with exactly init_items_per_user positives per user.

    Item degrees are as equal as the edge count allows; the edges come from
    shuffled stub matching with duplicate pairs repaired by stub swaps.
    """
    num_users, num_items = cfg.num_users, cfg.num_items
    num_edges = num_users * cfg.init_items_per_user
    if num_edges != num_items * cfg.init_users_per_item:
        logger.warning(
            f"{num_users} users x {cfg.init_items_per_user} items != "
            f"{num_items} items x {cfg.init_users_per_item} users; "
            f"item degrees will average {num_edges / num_items:.2f}"
        )
    base, extra = divmod(num_edges, num_items)
    if base + (extra > 0) > num_users:
        raise ValueError(
            f"infeasible degrees: {num_edges} edges over {num_items} items "
            f"exceed {num_users} users per item"
        )

    rng = np.random.default_rng(cfg.seed)
    item_degree = np.full(num_items, base, dtype=np.int64)
    item_degree[rng.choice(num_items, size=extra, replace=False)] += 1

    users = np.repeat(np.arange(num_users, dtype=np.int64), cfg.init_items_per_user)
    items = rng.permutation(np.repeat(np.arange(num_items, dtype=np.int64), item_degree))
    _repair_collisions(users, items, num_items, rng)
    return ImplicitDataset.from_pairs(users, items, num_users, num_items)


def _repair_collisions(
    users: np.ndarray, items: np.ndarray, num_items: int, rng: np.random.Generator
) -> None:
    """Swap item stubs between edges until no (user, item) pair repeats."""
    edges = Counter((users * num_items + items).tolist())
    for _ in range(MAX_REPAIR_ROUNDS):
        keys = users * num_items + items
        _, first = np.unique(keys, return_index=True)
        dup = np.setdiff1d(np.arange(len(keys)), first)
        if len(dup) == 0:
            return
        for p in dup:
            q = int(rng.integers(len(users)))
            a = users[p] * num_items + items[q]
            b = users[q] * num_items + items[p]
            if items[p] == items[q] or edges[a] or edges[b]:
                continue
            for key in (users[p] * num_items + items[p], users[q] * num_items + items[q]):
                edges[key] -= 1
            edges[a] += 1
            edges[b] += 1
            items[p], items[q] = items[q], items[p]
    raise ValueError("could not build a simple bipartite graph with these degrees")


def _training_recommender(cfg: SimConfig) -> Recommender:
    def recommend(dataset: ImplicitDataset, generation: int, rng: np.random.Generator):
        hp = replace(cfg.hp, epochs=cfg.epochs_per_loop, seed=int(rng.integers(2**31)))
        result = Trainer(dataset, hp).fit()
        return score_matrix(result.params)

    return recommend


def run_simulation(cfg: SimConfig, recommender: Optional[Recommender] = None) -> LoopState:
    """
    Run cfg.loops recommend-accept generations from gen_initial(cfg).

    Each generation scores every item (by default with an MF model retrained
    from scratch), accepts accept_k uniform picks from each user's top-rec_top
    unobserved items, and records TAP/ARP of the top-metric_k lists against the
    popularity of the data the recommender was trained on.

    Raises:
        SimulationDiverged: training produced non-finite values; carries the partial state
    """
    dataset = gen_initial(cfg)
    state = LoopState(generation=0, dataset=dataset, initial_interactions=dataset.num_positives)
    recommender = recommender or _training_recommender(cfg)
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.loops)
    all_users = np.arange(cfg.num_users)
    list_len = max(cfg.rec_top, cfg.metric_k)

    logger.info(
        f"Simulating {cfg.loops} loops of {cfg.method} from "
        f"{state.initial_interactions} initial interactions"
    )
    for generation, child in enumerate(children, start=1):
        rng = np.random.default_rng(child)
        try:
            scores = recommender(state.dataset, generation, rng)
        except FloatingPointError as e:
            raise SimulationDiverged(f"loop {generation}: {e}", state) from e
        if scores.shape != (cfg.num_users, cfg.num_items):
            raise ValueError(f"recommender returned scores of shape {scores.shape}")

        pop = popularity(state.dataset)
        lists = recommend_topk(scores, all_users, list_len, known=state.dataset)
        new_users, new_items = [], []
        for user, ranked in zip(all_users, lists):
            slate = ranked[: cfg.rec_top]
            if len(slate) == 0:
                continue
            picks = rng.choice(slate, size=min(cfg.accept_k, len(slate)), replace=False)
            new_users.append(np.full(len(picks), user, dtype=np.int64))
            new_items.append(picks)

        metric_lists = [ranked[: cfg.metric_k] for ranked in lists if len(ranked)]
        if metric_lists:
            tap = float(np.mean([pop.tail_flag[r].mean() for r in metric_lists]))
            arp = float(np.mean([pop.rank[r].mean() for r in metric_lists]))
        else:
            tap = arp = float("nan")

        new = int(sum(len(items) for items in new_items))
        if new:
            state.dataset = state.dataset.union(
                np.concatenate(new_users), np.concatenate(new_items)
            )
        record = LoopRecord(
            loop=generation,
            new_interactions=new,
            cumulative=state.cumulative + new,
            total_interactions=state.dataset.num_positives,
            tap=tap,
            arp=arp,
        )
        state.records.append(record)
        state.generation = generation
        logger.info(
            f"Loop {generation}: +{new} interactions (cumulative {record.cumulative}), "
            f"tap@{cfg.metric_k}={tap:.4f} arp@{cfg.metric_k}={arp:.2f}"
        )
    return state


def _method_names(cfgs: Sequence[SimConfig]) -> List[str]:
    names, seen = [], Counter()
    for cfg in cfgs:
        seen[cfg.method] += 1
        names.append(cfg.method if seen[cfg.method] == 1 else f"{cfg.method}_{seen[cfg.method]}")
    return names


def compare_methods(
    cfgs: Sequence[SimConfig],
    seeds: Sequence[int],
    out_dir: Optional[Union[str, Path]] = None,
) -> pd.DataFrame:
    """
    Run every config under every seed.

    Returns the long-form frame (method, seed, loop, new, cumulative, total,
    tap, arp). With `out_dir`, also writes `<method>.csv` holding per-loop mean
    and sample standard deviation across seeds.
    """
    if not cfgs or not seeds:
        raise ValueError("compare_methods needs at least one config and one seed")

    frames = []
    for name, cfg in zip(_method_names(cfgs), cfgs):
        for seed in seeds:
            try:
                frame = run_simulation(replace(cfg, seed=int(seed))).to_frame()
            except SimulationDiverged as e:
                raise SimulationDiverged(f"{name} seed {seed}: {e}", e.state) from e
            frame.insert(0, "seed", int(seed))
            frame.insert(0, "method", name)
            frames.append(frame)
    runs = pd.concat(frames, ignore_index=True)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, group in runs.groupby("method", sort=False):
            summary = group.groupby("loop")[["new", "cumulative", "tap", "arp"]].agg(
                ["mean", "std"]
            )
            summary.columns = [f"{metric}_{stat}" for metric, stat in summary.columns]
            summary = summary.fillna({c: 0.0 for c in summary.columns if c.endswith("_std")})
            summary.reset_index().to_csv(out_dir / f"{name}.csv", index=False)
            logger.info(f"Wrote {out_dir / f'{name}.csv'}")
    return runs
