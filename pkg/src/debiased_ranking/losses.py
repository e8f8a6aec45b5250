"""
Debiased Ranking - Training Objectives.

Pairwise (BPR, DPR with optional UFN, UBPR) and pointwise (Rel-MF, MFDU)
losses with analytic, row-sparse gradients. All losses use mean reduction
over the batch plus L2 on the embedding rows the batch touches.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.special import expit

from .exposure import GammaTable, PropensityTable
from .model import Hyperparams, LossKind, MFParams

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TripletBatch:
    """(u, i, j) triples: (u, i) a train positive, (u, j) unobserved."""

    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray

    def __post_init__(self):
        if not (len(self.users) == len(self.pos_items) == len(self.neg_items)):
            raise ValueError("triplet arrays must have the same length")

    def __len__(self) -> int:
        return len(self.users)


@dataclass(frozen=True, eq=False)
class PointBatch:
    """(u, i, label) examples with label 1 iff (u, i) is a train positive."""

    users: np.ndarray
    items: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if not (len(self.users) == len(self.items) == len(self.labels)):
            raise ValueError("point arrays must have the same length")

    def __len__(self) -> int:
        return len(self.users)


@dataclass(frozen=True, eq=False)
class SparseGradients:
    """Gradients for the unique user and item rows touched by a batch."""

    user_rows: np.ndarray
    user_grads: np.ndarray
    item_rows: np.ndarray
    item_grads: np.ndarray

    def to_dense(self, params: MFParams):
        g_user = np.zeros_like(params.user_factors)
        g_item = np.zeros_like(params.item_factors)
        g_user[self.user_rows] = self.user_grads
        g_item[self.item_rows] = self.item_grads
        return g_user, g_item


@dataclass(frozen=True, eq=False)
class LossOutput:
    value: float
    gradients: SparseGradients


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _one_minus_tanh(x: np.ndarray) -> np.ndarray:
    # 1 - tanh(x) == 2 * sigmoid(-2x), exact for large x
    return 2.0 * expit(-2.0 * x)


def ufn_weight(s_neg, beta: float):
    """UFN(s) = (1 - tanh(s)) ** beta; shrinks the push on high-scoring negatives."""
    if beta < 0:
        raise ValueError(f"beta must be non-negative, got {beta}")
    weight = _one_minus_tanh(np.asarray(s_neg, dtype=np.float64)) ** beta
    return float(weight) if np.ndim(weight) == 0 else weight


def _scatter(rows: np.ndarray, grads: np.ndarray):
    unique, inverse = np.unique(rows, return_inverse=True)
    summed = np.zeros((len(unique), grads.shape[1]), dtype=np.float64)
    np.add.at(summed, inverse, grads)
    return unique, summed


def _finish(
    params: MFParams,
    data_value: float,
    users: np.ndarray,
    user_grads: np.ndarray,
    items: np.ndarray,
    item_grads: np.ndarray,
    l2: float,
) -> LossOutput:
    user_rows, user_sum = _scatter(users, user_grads)
    item_rows, item_sum = _scatter(items, item_grads)

    u_emb = params.user_factors[user_rows]
    i_emb = params.item_factors[item_rows]
    reg = l2 * (np.sum(u_emb * u_emb) + np.sum(i_emb * i_emb))
    user_sum += 2.0 * l2 * u_emb
    item_sum += 2.0 * l2 * i_emb

    value = float(data_value + reg)
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite loss value {value}")
    return LossOutput(
        value=value,
        gradients=SparseGradients(
            user_rows=user_rows,
            user_grads=user_sum,
            item_rows=item_rows,
            item_grads=item_sum,
        ),
    )


def _pairwise(
    batch: TripletBatch,
    params: MFParams,
    l2: float,
    pos_scale: np.ndarray,
    neg_scale: np.ndarray,
    triple_weight: np.ndarray,
    beta: Optional[float],
) -> LossOutput:
    """
    Shared core: mean of w * softplus(-x) with x = a_i s_ui - a_j UFN(s_uj) s_uj.

    `beta=None` disables UFN; otherwise the UFN factor is differentiated
    through: d[UFN(s) s]/ds = UFN(s) * (1 - beta * s * (1 + tanh(s))).
    """
    if len(batch) == 0:
        raise ValueError("batch must not be empty")

    p_u = params.user_factors[batch.users]
    q_i = params.item_factors[batch.pos_items]
    q_j = params.item_factors[batch.neg_items]
    s_i = np.einsum("bd,bd->b", p_u, q_i)
    s_j = np.einsum("bd,bd->b", p_u, q_j)

    if beta is None:
        neg_term = s_j
        neg_slope = np.ones_like(s_j)
    else:
        ufn = _one_minus_tanh(s_j) ** beta
        neg_term = ufn * s_j
        neg_slope = ufn * (1.0 - beta * s_j * (2.0 * expit(2.0 * s_j)))

    x = pos_scale * s_i - neg_scale * neg_term
    size = len(batch)
    data_value = np.sum(triple_weight * _softplus(-x)) / size

    # dL/dx of w * softplus(-x) under mean reduction
    coef = -triple_weight * expit(-x) / size
    dl_ds_i = coef * pos_scale
    dl_ds_j = -coef * neg_scale * neg_slope

    grad_u = dl_ds_i[:, None] * q_i + dl_ds_j[:, None] * q_j
    grad_i = dl_ds_i[:, None] * p_u
    grad_j = dl_ds_j[:, None] * p_u

    return _finish(
        params,
        data_value,
        batch.users,
        grad_u,
        np.concatenate([batch.pos_items, batch.neg_items]),
        np.concatenate([grad_i, grad_j]),
        l2,
    )


def _pointwise(
    batch: PointBatch,
    params: MFParams,
    l2: float,
    pos_weight: np.ndarray,
    neg_weight: np.ndarray,
) -> LossOutput:
    """Mean of pos_weight * softplus(-s) + neg_weight * softplus(s)."""
    if len(batch) == 0:
        raise ValueError("batch must not be empty")

    p_u = params.user_factors[batch.users]
    q_i = params.item_factors[batch.items]
    s = np.einsum("bd,bd->b", p_u, q_i)
    size = len(batch)

    data_value = np.sum(pos_weight * _softplus(-s) + neg_weight * _softplus(s)) / size
    d_s = (-pos_weight * expit(-s) + neg_weight * expit(s)) / size

    return _finish(
        params,
        data_value,
        batch.users,
        d_s[:, None] * q_i,
        batch.items,
        d_s[:, None] * p_u,
        l2,
    )


def bpr(batch: TripletBatch, params: MFParams, hp: Hyperparams) -> LossOutput:
    """Bayesian personalized ranking: mean -ln sigmoid(s_ui - s_uj) + L2."""
    ones = np.ones(len(batch))
    return _pairwise(batch, params, hp.l2, ones, ones, ones, None)


def bpr_plus(batch: TripletBatch, params: MFParams, hp: Hyperparams) -> LossOutput:
    """BPR with the UFN weight on the negative score."""
    ones = np.ones(len(batch))
    return _pairwise(batch, params, hp.l2, ones, ones, ones, hp.beta)


def dpr(
    batch: TripletBatch,
    params: MFParams,
    gamma: GammaTable,
    hp: Hyperparams,
    use_ufn: bool = True,
) -> LossOutput:
    """
    Dynamic personalized ranking.

    Each score is divided by its item's exposure weight gamma. With UFN the
    negative side becomes UFN(s_uj) * s_uj / gamma_j.
    """
    if len(gamma.gamma) != params.num_items:
        raise ValueError(
            f"gamma covers {len(gamma.gamma)} items but the model has {params.num_items}"
        )
    inverse = gamma.inverse
    return _pairwise(
        batch,
        params,
        hp.l2,
        inverse[batch.pos_items],
        inverse[batch.neg_items],
        np.ones(len(batch)),
        hp.beta if use_ufn else None,
    )


def ubpr(
    batch: TripletBatch, params: MFParams, theta: PropensityTable, hp: Hyperparams
) -> LossOutput:
    """
    Unbiased BPR: each triple weighted by 1 / theta+_i.

    The (1 - S_uj / theta+_j) factor is 1 because sampled negatives are unobserved.
    """
    ones = np.ones(len(batch))
    weight = 1.0 / theta.theta_pos[batch.pos_items]
    return _pairwise(batch, params, hp.l2, ones, ones, weight, None)


def relmf(
    batch: PointBatch, params: MFParams, theta: PropensityTable, hp: Hyperparams
) -> LossOutput:
    """Rel-MF: (y / theta+) on the positive log-loss, (1 - y / theta+) on the negative."""
    labels = batch.labels.astype(np.float64)
    scaled = labels / theta.theta_pos[batch.items]
    return _pointwise(batch, params, hp.l2, scaled, 1.0 - scaled)


def mfdu(
    batch: PointBatch, params: MFParams, theta: PropensityTable, hp: Hyperparams
) -> LossOutput:
    """MFDU: Rel-MF with the negative term additionally divided by theta-."""
    labels = batch.labels.astype(np.float64)
    scaled = labels / theta.theta_pos[batch.items]
    neg_weight = (1.0 - scaled) / theta.theta_neg[batch.items]
    return _pointwise(batch, params, hp.l2, scaled, neg_weight)


def compute_loss(
    batch: Union[TripletBatch, PointBatch],
    params: MFParams,
    hp: Hyperparams,
    gamma: Optional[GammaTable] = None,
    theta: Optional[PropensityTable] = None,
) -> LossOutput:
    """Dispatch to the objective named by hp.loss_kind."""
    kind = hp.loss_kind
    if kind.is_pairwise != isinstance(batch, TripletBatch):
        raise ValueError(f"{kind.value} loss cannot consume a {type(batch).__name__}")
    if kind in (LossKind.DPR, LossKind.DPR_MINUS) and gamma is None:
        raise ValueError(f"{kind.value} loss needs a gamma table")
    if kind in (LossKind.UBPR, LossKind.RELMF, LossKind.MFDU) and theta is None:
        raise ValueError(f"{kind.value} loss needs a propensity table")

    if kind is LossKind.BPR:
        return bpr(batch, params, hp)
    if kind is LossKind.BPR_PLUS:
        return bpr_plus(batch, params, hp) if hp.ufn_active else bpr(batch, params, hp)
    if kind is LossKind.DPR:
        return dpr(batch, params, gamma, hp, use_ufn=hp.ufn_active)
    if kind is LossKind.DPR_MINUS:
        return dpr(batch, params, gamma, hp, use_ufn=False)
    if kind is LossKind.UBPR:
        return ubpr(batch, params, theta, hp)
    if kind is LossKind.RELMF:
        return relmf(batch, params, theta, hp)
    return mfdu(batch, params, theta, hp)
