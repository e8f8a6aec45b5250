"""
Debiased Ranking - Matrix Factorization Backbone.

Embedding storage, scoring, checkpoints and an Adam optimizer that consumes the
row-sparse gradients produced by the losses module.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Optional, Tuple, Union

import numpy as np
import pandas as pd

if TYPE_CHECKING:
    from .exposure import PopularityTable
    from .losses import SparseGradients

logger = logging.getLogger(__name__)

DEFAULT_DIM = 64
DEFAULT_LR = 1e-3
DEFAULT_L2 = 1e-6
DEFAULT_BATCH_SIZE = 1024
DEFAULT_NEGATIVES = 10
DEFAULT_ALPHA = 2.0
DEFAULT_BETA = 1.0
DEFAULT_EPOCHS = 100
DEFAULT_PATIENCE = 10
MAX_ALPHA = 6.0

INIT_STD = 0.01
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class LossKind(str, Enum):
    """Training objectives."""

    BPR = "bpr"
    BPR_PLUS = "bpr_plus"
    DPR = "dpr"
    DPR_MINUS = "dpr_minus"
    UBPR = "ubpr"
    RELMF = "relmf"
    MFDU = "mfdu"

    @property
    def is_pairwise(self) -> bool:
        return self not in (LossKind.RELMF, LossKind.MFDU)


@dataclass(frozen=True)
class Hyperparams:
    """Training hyperparameters with their defaults."""

    dim: int = DEFAULT_DIM
    lr: float = DEFAULT_LR
    l2: float = DEFAULT_L2
    batch_size: int = DEFAULT_BATCH_SIZE
    num_negatives: int = DEFAULT_NEGATIVES
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    epochs: int = DEFAULT_EPOCHS
    seed: int = 0
    loss_kind: LossKind = LossKind.DPR
    use_ufn: bool = True
    patience: int = DEFAULT_PATIENCE
    gamma_source: str = "normalized"
    propensity_exponent: float = 0.5
    propensity_floor: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "loss_kind", LossKind(self.loss_kind))
        for name in ("dim", "batch_size", "num_negatives"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")
        if not 0.0 <= self.alpha <= MAX_ALPHA:
            raise ValueError(f"alpha must lie in [0, {MAX_ALPHA}], got {self.alpha}")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.epochs < 0 or self.patience < 1:
            raise ValueError("epochs must be non-negative and patience at least 1")

    @property
    def ufn_active(self) -> bool:
        """Whether the negative side of the pairwise loss carries the UFN weight."""
        return self.use_ufn and self.loss_kind in (LossKind.DPR, LossKind.BPR_PLUS)


@dataclass(eq=False)
class MFParams:
    """User factors U (M x d) and item factors V (N x d)."""

    user_factors: np.ndarray
    item_factors: np.ndarray

    def __post_init__(self):
        if self.user_factors.ndim != 2 or self.item_factors.ndim != 2:
            raise ValueError("factor matrices must be two-dimensional")
        if self.user_factors.shape[1] != self.item_factors.shape[1]:
            raise ValueError("user and item factors must share the embedding dimension")

    @property
    def num_users(self) -> int:
        return self.user_factors.shape[0]

    @property
    def num_items(self) -> int:
        return self.item_factors.shape[0]

    @property
    def dim(self) -> int:
        return self.user_factors.shape[1]

    def copy(self) -> "MFParams":
        return MFParams(self.user_factors.copy(), self.item_factors.copy())

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.user_factors).all() and np.isfinite(self.item_factors).all())


@dataclass(eq=False)
class OptimizerState:
    """Adam first/second moments shaped like MFParams, plus the step counter."""

    m_user: np.ndarray
    v_user: np.ndarray
    m_item: np.ndarray
    v_item: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, params: MFParams) -> "OptimizerState":
        return cls(
            m_user=np.zeros_like(params.user_factors),
            v_user=np.zeros_like(params.user_factors),
            m_item=np.zeros_like(params.item_factors),
            v_item=np.zeros_like(params.item_factors),
        )


def init(num_users: int, num_items: int, hp: Hyperparams) -> MFParams:
    """Zero-mean normal initialisation with standard deviation 0.01."""
    if num_users < 1 or num_items < 1:
        raise ValueError("num_users and num_items must be positive")
    rng = np.random.default_rng(hp.seed)
    return MFParams(
        user_factors=rng.normal(0.0, INIT_STD, size=(num_users, hp.dim)),
        item_factors=rng.normal(0.0, INIT_STD, size=(num_items, hp.dim)),
    )


def _check_user(params: MFParams, u: int) -> None:
    if not 0 <= u < params.num_users:
        raise IndexError(f"user index {u} out of range [0, {params.num_users})")


def score(params: MFParams, u: int, i: int) -> float:
    """Predicted score s_ui = <U_u, V_i>."""
    _check_user(params, u)
    if not 0 <= i < params.num_items:
        raise IndexError(f"item index {i} out of range [0, {params.num_items})")
    return float(params.user_factors[u] @ params.item_factors[i])


def score_all(params: MFParams, u: int) -> np.ndarray:
    """Scores of user u for every item."""
    _check_user(params, u)
    return params.item_factors @ params.user_factors[u]


def score_matrix(params: MFParams) -> np.ndarray:
    return params.user_factors @ params.item_factors.T


def _dense(rows: np.ndarray, grads: np.ndarray, shape) -> np.ndarray:
    dense = np.zeros(shape, dtype=np.float64)
    np.add.at(dense, rows, grads)
    return dense


def adam_step(
    params: MFParams,
    grads: "SparseGradients",
    state: OptimizerState,
    hp: Hyperparams,
) -> Tuple[MFParams, OptimizerState]:
    """
    Apply one bias-corrected Adam update in place.

    The row-sparse gradients are scattered into dense tables so every row's
    moments decay each step. L2 is already part of the gradients.
    """
    if not (np.isfinite(grads.user_grads).all() and np.isfinite(grads.item_grads).all()):
        raise FloatingPointError(
            f"non-finite gradient at optimizer step {state.step + 1}"
        )

    g_user = _dense(grads.user_rows, grads.user_grads, params.user_factors.shape)
    g_item = _dense(grads.item_rows, grads.item_grads, params.item_factors.shape)

    state.step += 1
    correction1 = 1.0 - ADAM_BETA1**state.step
    correction2 = 1.0 - ADAM_BETA2**state.step

    for table, grad, m, v in (
        (params.user_factors, g_user, state.m_user, state.v_user),
        (params.item_factors, g_item, state.m_item, state.v_item),
    ):
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * grad
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * grad * grad
        table -= hp.lr * (m / correction1) / (np.sqrt(v / correction2) + ADAM_EPS)

    return params, state


def save_params(params: MFParams, path: Union[str, Path]) -> Path:
    path = Path(path)
    np.savez(path, user_factors=params.user_factors, item_factors=params.item_factors)
    return path


def load_params(path: Union[str, Path]) -> MFParams:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"No checkpoint at {path}")
    try:
        with np.load(path, allow_pickle=False) as archive:
            return MFParams(
                user_factors=archive["user_factors"].astype(np.float64),
                item_factors=archive["item_factors"].astype(np.float64),
            )
    except (AttributeError, KeyError, OSError, TypeError, ValueError) as e:
        raise ValueError(f"Unreadable checkpoint {path}: {e}") from e


def export_embeddings(
    params: MFParams,
    directory: Union[str, Path],
    pop: Optional["PopularityTable"] = None,
) -> Tuple[Path, Path]:
    """
    Write user_embeddings.csv and item_embeddings.csv (id followed by d values).

    When a popularity table is given the item file also carries
    popularity_rank and tail_flag so embeddings can be coloured by popularity.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    columns = [f"f{k}" for k in range(params.dim)]

    users = pd.DataFrame(params.user_factors, columns=columns)
    users.insert(0, "id", np.arange(params.num_users))
    items = pd.DataFrame(params.item_factors, columns=columns)
    items.insert(0, "id", np.arange(params.num_items))
    if pop is not None:
        items["popularity_rank"] = pop.rank
        items["tail_flag"] = pop.tail_flag

    user_path, item_path = directory / "user_embeddings.csv", directory / "item_embeddings.csv"
    users.to_csv(user_path, index=False)
    items.to_csv(item_path, index=False)
    logger.info(f"Exported {params.num_users} user and {params.num_items} item embeddings")
    return user_path, item_path
