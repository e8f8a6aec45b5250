"""
Debiased Ranking - Leave-one-out Splits.

Builds per-user validation/test hold-outs and supports mixing missing-at-random
positives into a biased training set.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from .ratings import ImplicitDataset

logger = logging.getLogger(__name__)

# Users with fewer positives keep everything in train.
MIN_POSITIVES_FOR_HOLDOUT = 3
NO_ITEM = -1

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True, eq=False)
class SplitDataset:
    """Train positives plus one optional validation and test item per user.

    `validation` and `test` are length-M integer arrays holding the held-out
    item of each user, or NO_ITEM (-1) when the user has none.
    """

    train: ImplicitDataset
    validation: np.ndarray
    test: np.ndarray
    seed: Optional[int] = None
    skipped_users: int = 0

    def __post_init__(self):
        for name in ("validation", "test"):
            held = getattr(self, name)
            if held.shape != (self.train.num_users,):
                raise ValueError(f"{name} must hold one entry per user")
            users = np.flatnonzero(held != NO_ITEM)
            if len(users) and self.train.contains(users, held[users]).any():
                raise ValueError(f"{name} items must not be train positives")

    @property
    def num_users(self) -> int:
        return self.train.num_users

    @property
    def num_items(self) -> int:
        return self.train.num_items

    def held_out(self, which: str = "test") -> np.ndarray:
        if which not in ("test", "validation"):
            raise ValueError(f"which must be 'test' or 'validation', got {which!r}")
        return self.test if which == "test" else self.validation

    def eval_users(self, which: str = "test") -> np.ndarray:
        return np.flatnonzero(self.held_out(which) != NO_ITEM)

    def known_positives(self, user: int) -> np.ndarray:
        """Train, validation and test positives of a user."""
        extra = [h[user] for h in (self.validation, self.test) if h[user] != NO_ITEM]
        return np.union1d(self.train.user_items(user), np.asarray(extra, dtype=np.int64))


def leave_one_out_split(ds: ImplicitDataset, seed: int) -> SplitDataset:
    """
    Hold out one uniformly random positive for test and one for validation.

    Users with fewer than three positives keep all of them in train.
    """
    if ds.num_positives == 0:
        raise ValueError("cannot split an empty dataset")

    rng = np.random.default_rng(seed)
    validation = np.full(ds.num_users, NO_ITEM, dtype=np.int64)
    test = np.full(ds.num_users, NO_ITEM, dtype=np.int64)
    keep_users, keep_items = [], []
    skipped = 0

    for user in range(ds.num_users):
        items = ds.user_items(user)
        if len(items) < MIN_POSITIVES_FOR_HOLDOUT:
            skipped += 1
            keep_users.append(np.full(len(items), user, dtype=np.int64))
            keep_items.append(items)
            continue
        picks = rng.choice(len(items), size=2, replace=False)
        test[user] = items[picks[0]]
        validation[user] = items[picks[1]]
        remaining = np.delete(items, picks)
        keep_users.append(np.full(len(remaining), user, dtype=np.int64))
        keep_items.append(remaining)

    train = ImplicitDataset.from_pairs(
        np.concatenate(keep_users), np.concatenate(keep_items), ds.num_users, ds.num_items
    )
    held = int((test != NO_ITEM).sum())
    logger.info(
        f"Leave-one-out split (seed={seed}): {held} users held out, "
        f"{skipped} users with fewer than {MIN_POSITIVES_FOR_HOLDOUT} positives kept whole, "
        f"{train.num_positives} train positives"
    )
    return SplitDataset(
        train=train, validation=validation, test=test, seed=seed, skipped_users=skipped
    )


def mix_mar(
    train_mnar: ImplicitDataset, mar: ImplicitDataset, pct: float, seed: int
) -> ImplicitDataset:
    """Add a uniformly random `pct` share of the MAR positives missing from train."""
    if not 0.0 <= pct <= 1.0:
        raise ValueError(f"pct must lie in [0, 1], got {pct}")
    if (train_mnar.num_users, train_mnar.num_items) != (mar.num_users, mar.num_items):
        raise ValueError("MAR and MNAR datasets must have the same dimensions")

    mar_users, mar_items = mar.pairs()
    fresh = ~train_mnar.contains(mar_users, mar_items)
    mar_users, mar_items = mar_users[fresh], mar_items[fresh]

    n_add = int(round(pct * len(mar_users)))
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(mar_users), size=n_add, replace=False)
    mixed = train_mnar.union(mar_users[chosen], mar_items[chosen])
    logger.info(
        f"Mixed {n_add} of {len(mar_users)} new MAR positives ({pct:.0%}) into train"
    )
    return mixed


def save_split(split: SplitDataset, directory: Union[str, Path]) -> Path:
    """Write manifest.json plus train/validation/test CSVs of (user, item)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    split.train.to_frame().to_csv(directory / "train.csv", index=False)
    for which in ("validation", "test"):
        users = split.eval_users(which)
        pd.DataFrame({"user": users, "item": split.held_out(which)[users]}).to_csv(
            directory / f"{which}.csv", index=False
        )

    manifest = {
        "num_users": split.num_users,
        "num_items": split.num_items,
        "positives": split.train.num_positives
        + len(split.eval_users("validation"))
        + len(split.eval_users("test")),
        "train_positives": split.train.num_positives,
        "validation_users": int(len(split.eval_users("validation"))),
        "test_users": int(len(split.eval_users("test"))),
        "skipped_users": split.skipped_users,
        "seed": split.seed,
    }
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))
    logger.info(f"Wrote split to {directory}")
    return directory


def load_split(directory: Union[str, Path]) -> SplitDataset:
    """Read a split written by save_split."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.is_file():
        raise FileNotFoundError(f"No dataset manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    num_users, num_items = int(manifest["num_users"]), int(manifest["num_items"])

    frame = pd.read_csv(directory / "train.csv")
    train = ImplicitDataset.from_pairs(
        frame["user"].to_numpy(), frame["item"].to_numpy(), num_users, num_items
    )
    held = {}
    for which in ("validation", "test"):
        frame = pd.read_csv(directory / f"{which}.csv")
        users = frame["user"].to_numpy(np.int64)
        items = frame["item"].to_numpy(np.int64)
        if len(users) and (users.min() < 0 or users.max() >= num_users):
            raise ValueError(f"{which}.csv references users outside [0, {num_users})")
        if len(items) and (items.min() < 0 or items.max() >= num_items):
            raise ValueError(f"{which}.csv references items outside [0, {num_items})")
        column = np.full(num_users, NO_ITEM, dtype=np.int64)
        column[users] = items
        held[which] = column
    return SplitDataset(
        train=train,
        validation=held["validation"],
        test=held["test"],
        seed=manifest.get("seed"),
        skipped_users=int(manifest.get("skipped_users", 0)),
    )
