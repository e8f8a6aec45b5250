"""
Debiased Ranking - Training Loop.

Epoch loop over freshly sampled batches with Adam updates and early stopping
on validation NDCG.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

from .data.ratings import ImplicitDataset
from .data.splits import SplitDataset
from .evaluation import EvalConfig, evaluate
from .exposure import gamma, popularity, propensities
from .losses import compute_loss
from .model import Hyperparams, MFParams, OptimizerState, adam_step, init
from .sampler import SamplerConfig, build_points, build_triplets

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    recall: float = float("nan")
    ndcg: float = float("nan")
    arp: float = float("nan")
    tap: float = float("nan")


@dataclass
class TrainResult:
    """Best parameters plus the per-epoch history that selected them."""

    params: MFParams
    history: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def to_frame(self) -> pd.DataFrame:
        columns = ["epoch", "loss", "recall", "ndcg", "arp", "tap"]
        return pd.DataFrame([asdict(r) for r in self.history], columns=columns)


def sampler_config_for(hp: Hyperparams, **overrides) -> SamplerConfig:
    """SamplerConfig sharing seed, batch size and negative count with hp."""
    values = dict(num_negatives=hp.num_negatives, seed=hp.seed, batch_size=hp.batch_size)
    values.update(overrides)
    return SamplerConfig(**values)


class Trainer:
    """
    Trains one MF model with the objective named by hp.loss_kind.

    Exposure weights and propensities are computed once from the training
    positives. When a split with validation items is given, the model is
    evaluated after every epoch and the best-NDCG parameters are kept.
    """

    def __init__(
        self,
        train: ImplicitDataset,
        hp: Hyperparams,
        sampler_cfg: Optional[SamplerConfig] = None,
        split: Optional[SplitDataset] = None,
        eval_cfg: Optional[EvalConfig] = None,
    ):
        if train.num_positives == 0:
            raise ValueError("training set has no positives")
        self.train = train
        self.hp = hp
        self.sampler_cfg = sampler_cfg or sampler_config_for(hp)
        self.split = split
        self.eval_cfg = eval_cfg or EvalConfig(seed=hp.seed)

        self.pop = popularity(train)
        self.gamma = gamma(self.pop, hp.alpha, hp.gamma_source)
        self.theta = propensities(self.pop, hp.propensity_exponent, hp.propensity_floor)

    @property
    def validates(self) -> bool:
        return self.split is not None and len(self.split.eval_users("validation")) > 0

    def _batches(self, params: MFParams, epoch: int):
        builder = build_triplets if self.hp.loss_kind.is_pairwise else build_points
        return builder(self.train, self.sampler_cfg, params=params, epoch=epoch)

    def run_epoch(self, params: MFParams, state: OptimizerState, epoch: int) -> float:
        """One pass over a freshly sampled batch stream; returns the mean batch loss."""
        total, count = 0.0, 0
        for batch in self._batches(params, epoch):
            out = compute_loss(batch, params, self.hp, gamma=self.gamma, theta=self.theta)
            try:
                adam_step(params, out.gradients, state, self.hp)
            except FloatingPointError as e:
                raise FloatingPointError(f"epoch {epoch}: {e}") from e
            total += out.value
            count += 1
        if not params.is_finite():
            raise FloatingPointError(f"non-finite parameters after epoch {epoch}")
        return total / max(count, 1)

    def fit(self, params: Optional[MFParams] = None) -> TrainResult:
        hp = self.hp
        params = params or init(self.train.num_users, self.train.num_items, hp)
        state = OptimizerState.zeros_like(params)
        logger.info(
            f"Training {hp.loss_kind.value} (alpha={hp.alpha}, beta={hp.beta}, "
            f"ufn={hp.ufn_active}) on {self.train.num_positives} positives"
        )

        result = TrainResult(params=params.copy())
        best_ndcg = -np.inf
        stale = 0
        for epoch in range(1, hp.epochs + 1):
            loss = self.run_epoch(params, state, epoch)
            if not self.validates:
                result.history.append(EpochRecord(epoch=epoch, loss=loss))
                logger.info(f"Epoch {epoch}: loss={loss:.5f}")
                continue

            report = evaluate(params, self.split, self.eval_cfg, self.pop, which="validation")
            result.history.append(
                EpochRecord(
                    epoch=epoch,
                    loss=loss,
                    recall=report.recall,
                    ndcg=report.ndcg,
                    arp=report.arp,
                    tap=report.tap,
                )
            )
            logger.info(
                f"Epoch {epoch}: loss={loss:.5f} val ndcg@{self.eval_cfg.k}={report.ndcg:.4f}"
            )
            if report.ndcg > best_ndcg:
                best_ndcg = report.ndcg
                result.params = params.copy()
                result.best_epoch = epoch
                stale = 0
            else:
                stale += 1
                if stale >= hp.patience:
                    logger.info(
                        f"Early stopping at epoch {epoch}; best epoch {result.best_epoch}"
                    )
                    result.stopped_early = True
                    break

        if not self.validates:
            result.params = params.copy()
            result.best_epoch = hp.epochs
        return result
