"""
Debiased Ranking - Rating Ingestion.

Raw rating logs are parsed into columnar arrays, re-indexed densely and
binarized into an immutable sparse interaction matrix.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp

logger = logging.getLogger(__name__)

RATING_FORMATS = ("tsv", "csv", "ascii_matrix")
DEFAULT_COLUMN_MAP = (0, 1, 2)
# Larger ids do not survive the float parse exactly.
MAX_RAW_ID = 2**53

PathLike = Union[str, Path]


@dataclass(frozen=True, eq=False)
class RawRatings:
    """Columnar (user, item, value) records before binarization."""

    users: np.ndarray
    items: np.ndarray
    values: np.ndarray
    malformed: int = 0

    def __post_init__(self):
        if not (len(self.users) == len(self.items) == len(self.values)):
            raise ValueError("users, items and values must have the same length")
        if len(self.users) and (self.users.min() < 0 or self.items.min() < 0):
            raise ValueError("user and item ids must be non-negative")
        if np.isnan(self.values).any():
            raise ValueError("rating values must not contain NaN")

    def __len__(self) -> int:
        return len(self.users)


@dataclass(frozen=True, eq=False)
class IdMap:
    """Dense index -> raw id lookup for users and items."""

    user_ids: np.ndarray
    item_ids: np.ndarray

    def save(self, directory: PathLike) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name, ids in (("user_ids.csv", self.user_ids), ("item_ids.csv", self.item_ids)):
            pd.DataFrame({"index": np.arange(len(ids)), "raw_id": ids}).to_csv(
                directory / name, index=False
            )

    @classmethod
    def load(cls, directory: PathLike) -> "IdMap":
        directory = Path(directory)
        users = pd.read_csv(directory / "user_ids.csv")["raw_id"].to_numpy(np.int64)
        items = pd.read_csv(directory / "item_ids.csv")["raw_id"].to_numpy(np.int64)
        return cls(user_ids=users, item_ids=items)

    def encode(self, raw: RawRatings) -> RawRatings:
        """Map raw ids through this id map, dropping records with unknown ids."""
        user_pos = _lookup(self.user_ids, raw.users)
        item_pos = _lookup(self.item_ids, raw.items)
        known = (user_pos >= 0) & (item_pos >= 0)
        dropped = int((~known).sum())
        if dropped:
            logger.warning(f"Dropped {dropped} records with ids outside the id map")
        return RawRatings(
            users=user_pos[known],
            items=item_pos[known],
            values=raw.values[known],
            malformed=raw.malformed,
        )


def _lookup(ids: np.ndarray, raw: np.ndarray) -> np.ndarray:
    order = np.argsort(ids)
    sorted_ids = ids[order]
    pos = np.searchsorted(sorted_ids, raw)
    pos_clipped = np.minimum(pos, len(sorted_ids) - 1)
    found = (pos < len(sorted_ids)) & (sorted_ids[pos_clipped] == raw)
    return np.where(found, order[pos_clipped], -1).astype(np.int64)


@dataclass(frozen=True, eq=False)
class ImplicitDataset:
    """Binary user-item interaction matrix S with per-item positive counts n_i.

    The dataset is immutable after construction: the CSR matrix is built once
    and `item_counts` is derived from it.
    """

    num_users: int
    num_items: int
    matrix: sp.csr_matrix = field(repr=False)
    item_counts: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.matrix.shape != (self.num_users, self.num_items):
            raise ValueError(
                f"matrix shape {self.matrix.shape} does not match "
                f"({self.num_users}, {self.num_items})"
            )
        counts = np.bincount(self.matrix.indices, minlength=self.num_items)
        object.__setattr__(self, "item_counts", counts.astype(np.int64))

    @classmethod
    def from_pairs(
        cls,
        users: Sequence[int],
        items: Sequence[int],
        num_users: int,
        num_items: int,
    ) -> "ImplicitDataset":
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        if len(users) != len(items):
            raise ValueError("users and items must have the same length")
        if len(users):
            if users.min() < 0 or users.max() >= num_users:
                raise ValueError(f"user index outside [0, {num_users})")
            if items.min() < 0 or items.max() >= num_items:
                raise ValueError(f"item index outside [0, {num_items})")
        matrix = sp.csr_matrix(
            (np.ones(len(users), dtype=np.float64), (users, items)),
            shape=(num_users, num_items),
        )
        matrix.sum_duplicates()
        matrix.data[:] = 1.0
        matrix.sort_indices()
        return cls(num_users=num_users, num_items=num_items, matrix=matrix)

    @classmethod
    def empty(cls, num_users: int, num_items: int) -> "ImplicitDataset":
        return cls.from_pairs([], [], num_users, num_items)

    @property
    def num_positives(self) -> int:
        return int(self.matrix.nnz)

    @property
    def user_degrees(self) -> np.ndarray:
        return np.diff(self.matrix.indptr).astype(np.int64)

    def user_items(self, user: int) -> np.ndarray:
        """Sorted positive items of one user."""
        start, end = self.matrix.indptr[user], self.matrix.indptr[user + 1]
        return self.matrix.indices[start:end].astype(np.int64)

    def pairs(self) -> Tuple[np.ndarray, np.ndarray]:
        users = np.repeat(np.arange(self.num_users, dtype=np.int64), self.user_degrees)
        return users, self.matrix.indices.astype(np.int64)

    @cached_property
    def keys(self) -> np.ndarray:
        """Sorted linear keys u * N + i of all positives."""
        users, items = self.pairs()
        return users * self.num_items + items

    def contains(self, users, items) -> np.ndarray:
        """Vectorised membership test for (user, item) pairs."""
        keys = np.asarray(users, dtype=np.int64) * self.num_items + np.asarray(
            items, dtype=np.int64
        )
        known = self.keys
        if len(known) == 0:
            return np.zeros(keys.shape, dtype=bool)
        pos = np.searchsorted(known, keys)
        pos = np.minimum(pos, len(known) - 1)
        return known[pos] == keys

    def union(self, users, items) -> "ImplicitDataset":
        """A new dataset holding these positives plus the given pairs."""
        own_users, own_items = self.pairs()
        return ImplicitDataset.from_pairs(
            np.concatenate([own_users, np.asarray(users, dtype=np.int64)]),
            np.concatenate([own_items, np.asarray(items, dtype=np.int64)]),
            self.num_users,
            self.num_items,
        )

    def to_frame(self) -> pd.DataFrame:
        users, items = self.pairs()
        return pd.DataFrame({"user": users, "item": items})


def load_ratings(
    path: PathLike,
    fmt: str = "tsv",
    column_map: Tuple[int, int, int] = DEFAULT_COLUMN_MAP,
    skip_header: bool = False,
) -> RawRatings:
    """
    Parse a rating log into RawRatings.

    Args:
        path: File to read
        fmt: One of tsv, csv or ascii_matrix
        column_map: Column indices of (user, item, value) for delimited formats
        skip_header: Drop the first line of delimited files

    Returns:
        RawRatings with duplicate (user, item) pairs resolved to the last record
    """
    path = Path(path)
    if fmt not in RATING_FORMATS:
        raise ValueError(f"Unknown ratings format {fmt!r}; expected one of {RATING_FORMATS}")
    if not path.is_file():
        raise FileNotFoundError(f"Ratings file {path} does not exist")

    if fmt == "ascii_matrix":
        raw = _load_ascii_matrix(path)
    else:
        raw = _load_delimited(path, "\t" if fmt == "tsv" else ",", column_map, skip_header)

    if len(raw) == 0:
        raise ValueError(f"zero valid records in {path}")
    if raw.malformed:
        logger.warning(f"Skipped {raw.malformed} malformed lines in {path}")
    logger.info(f"Loaded {len(raw)} rating records from {path}")
    return raw


def _load_delimited(
    path: Path, sep: str, column_map: Tuple[int, int, int], skip_header: bool
) -> RawRatings:
    bad_lines = []

    def _count_bad_line(line):
        bad_lines.append(line)
        return None

    try:
        frame = pd.read_csv(
            path,
            sep=sep,
            header=None,
            dtype=str,
            skiprows=1 if skip_header else 0,
            skip_blank_lines=True,
            engine="python",
            on_bad_lines=_count_bad_line,
        )
    except pd.errors.EmptyDataError:
        return _empty_raw()
    except (OSError, UnicodeDecodeError) as e:
        raise ValueError(f"Unreadable ratings file {path}: {e}") from e

    if frame.empty:
        return _empty_raw()
    if min(column_map) < 0 or max(column_map) >= frame.shape[1]:
        raise ValueError(
            f"Column index out of range: {column_map} for {frame.shape[1]} columns"
        )

    user_col, item_col, value_col = column_map
    users = pd.to_numeric(frame[user_col], errors="coerce")
    items = pd.to_numeric(frame[item_col], errors="coerce")
    values = pd.to_numeric(frame[value_col], errors="coerce")

    valid = users.notna() & items.notna() & values.notna()
    valid &= (users >= 0) & (items >= 0) & (users < MAX_RAW_ID) & (items < MAX_RAW_ID)
    valid &= values.abs() < np.inf
    valid &= (users % 1 == 0) & (items % 1 == 0)
    malformed = int((~valid).sum()) + len(bad_lines)

    records = pd.DataFrame(
        {
            "user": users[valid].astype(np.int64),
            "item": items[valid].astype(np.int64),
            "value": values[valid].astype(np.float64),
        }
    )
    records = records.drop_duplicates(subset=["user", "item"], keep="last")
    return RawRatings(
        users=records["user"].to_numpy(),
        items=records["item"].to_numpy(),
        values=records["value"].to_numpy(),
        malformed=malformed,
    )


def _load_ascii_matrix(path: Path) -> RawRatings:
    try:
        dense = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except ValueError as e:
        raise ValueError(f"Unreadable rating matrix {path}: {e}") from e
    if dense.size == 0:
        return _empty_raw()
    dense = np.nan_to_num(dense, nan=0.0, posinf=0.0, neginf=0.0)
    users, items = np.nonzero(dense)
    return RawRatings(
        users=users.astype(np.int64),
        items=items.astype(np.int64),
        values=dense[users, items],
    )


def _empty_raw() -> RawRatings:
    return RawRatings(
        users=np.empty(0, dtype=np.int64),
        items=np.empty(0, dtype=np.int64),
        values=np.empty(0, dtype=np.float64),
    )


def reindex(raw: RawRatings) -> Tuple[RawRatings, IdMap]:
    """Re-index raw user and item ids to dense 0-based indices (sorted raw order)."""
    user_ids, users = np.unique(raw.users, return_inverse=True)
    item_ids, items = np.unique(raw.items, return_inverse=True)
    dense = RawRatings(
        users=users.astype(np.int64),
        items=items.astype(np.int64),
        values=raw.values,
        malformed=raw.malformed,
    )
    return dense, IdMap(user_ids=user_ids.astype(np.int64), item_ids=item_ids.astype(np.int64))


def binarize(
    raw: RawRatings, threshold: float, num_users: int, num_items: int
) -> ImplicitDataset:
    """Keep (u, i) as positive iff its value is at least `threshold`."""
    if not np.isfinite(threshold):
        raise ValueError("threshold must be finite")
    if len(raw) and raw.users.max() >= num_users:
        raise ValueError(
            f"user id {int(raw.users.max())} exceeds declared num_users={num_users}"
        )
    if len(raw) and raw.items.max() >= num_items:
        raise ValueError(
            f"item id {int(raw.items.max())} exceeds declared num_items={num_items}"
        )
    keep = raw.values >= threshold
    dataset = ImplicitDataset.from_pairs(
        raw.users[keep], raw.items[keep], num_users, num_items
    )
    logger.info(
        f"Binarized {len(raw)} records at threshold {threshold}: "
        f"{dataset.num_positives} positives over {num_users} users x {num_items} items"
    )
    return dataset
