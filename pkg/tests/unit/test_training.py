"""
Unit tests for the training loop.
"""

from dataclasses import replace

import numpy as np
import pytest

from src.debiased_ranking.data.ratings import ImplicitDataset
from src.debiased_ranking.evaluation import EvalReport
from src.debiased_ranking.model import Hyperparams, init
from src.debiased_ranking.training import Trainer, sampler_config_for

pytestmark = pytest.mark.unit


def _report(ndcg):
    return EvalReport(recall=ndcg, ndcg=ndcg, arp=10.0, tap=0.5, users_evaluated=40)


class TestSamplerConfigFor:
    """Test deriving sampler settings from hyperparameters."""

    def test_shares_fields(self, small_hp):
        cfg = sampler_config_for(small_hp)
        assert cfg.num_negatives == 3 and cfg.batch_size == 256 and cfg.seed == 0

    def test_overrides(self, small_hp):
        cfg = sampler_config_for(small_hp, strategy="score_sorted", pool_size=7)
        assert cfg.strategy.value == "score_sorted" and cfg.pool_size == 7


class TestTrainerWithoutValidation:
    """Training on train positives only."""

    def test_runs_every_epoch(self, small_dataset, small_hp):
        result = Trainer(small_dataset, small_hp).fit()
        assert len(result.history) == 3
        assert result.best_epoch == 3
        assert not result.stopped_early
        assert all(np.isfinite(r.loss) for r in result.history)
        assert np.isnan(result.history[0].ndcg)

    def test_loss_decreases(self, small_dataset):
        hp = Hyperparams(
            dim=8, lr=0.05, l2=1e-5, batch_size=64, num_negatives=3, epochs=10, loss_kind="bpr"
        )
        history = Trainer(small_dataset, hp).fit().history
        assert history[-1].loss < history[0].loss

    def test_same_seed_same_parameters(self, small_dataset, small_hp):
        a = Trainer(small_dataset, small_hp).fit().params
        b = Trainer(small_dataset, small_hp).fit().params
        assert np.array_equal(a.user_factors, b.user_factors)
        assert np.array_equal(a.item_factors, b.item_factors)

    def test_alpha_zero_dpr_without_ufn_trains_like_bpr(self, small_dataset, small_hp):
        bpr_hp = replace(small_hp, loss_kind="bpr")
        dpr_hp = replace(small_hp, alpha=0.0, use_ufn=False)
        a = Trainer(small_dataset, bpr_hp).fit().params
        b = Trainer(small_dataset, dpr_hp).fit().params
        assert np.allclose(a.user_factors, b.user_factors, atol=1e-9, rtol=0)
        assert np.allclose(a.item_factors, b.item_factors, atol=1e-9, rtol=0)

    @pytest.mark.parametrize("loss_kind", ["bpr_plus", "dpr_minus", "ubpr", "relmf", "mfdu"])
    def test_every_objective_trains(self, small_dataset, small_hp, loss_kind):
        hp = replace(small_hp, loss_kind=loss_kind, epochs=1)
        result = Trainer(small_dataset, hp).fit()
        assert result.params.is_finite()

    def test_score_sorted_negatives(self, small_dataset, small_hp):
        cfg = sampler_config_for(small_hp, strategy="score_sorted", pool_size=10)
        result = Trainer(small_dataset, small_hp, sampler_cfg=cfg).fit()
        assert result.params.is_finite()

    def test_warm_start_does_not_mutate_input(self, small_dataset, small_hp):
        start = init(40, 60, small_hp)
        before = start.copy()
        Trainer(small_dataset, small_hp).fit(start.copy())
        assert np.array_equal(start.user_factors, before.user_factors)

    def test_zero_epochs_returns_initial_parameters(self, small_dataset, small_hp):
        hp = replace(small_hp, epochs=0)
        result = Trainer(small_dataset, hp).fit()
        assert result.history == []
        assert np.array_equal(result.params.user_factors, init(40, 60, hp).user_factors)

    def test_empty_training_set(self, small_hp):
        with pytest.raises(ValueError, match="no positives"):
            Trainer(ImplicitDataset.empty(3, 4), small_hp)


class TestTrainerWithValidation:
    """Model selection on validation NDCG."""

    def test_history_carries_validation_metrics(self, small_split, small_hp):
        result = Trainer(small_split.train, small_hp, split=small_split).fit()
        frame = result.to_frame()
        assert frame.columns.tolist() == ["epoch", "loss", "recall", "ndcg", "arp", "tap"]
        assert len(frame) == 3
        assert frame["ndcg"].between(0, 1).all()
        assert 1 <= result.best_epoch <= 3

    def test_early_stopping(self, small_split, small_hp, mocker):
        mocker.patch(
            "src.debiased_ranking.training.evaluate",
            side_effect=[_report(v) for v in (0.1, 0.3, 0.2, 0.2, 0.9)],
        )
        hp = replace(small_hp, epochs=5, patience=2)
        result = Trainer(small_split.train, hp, split=small_split).fit()
        assert result.stopped_early
        assert result.best_epoch == 2
        assert [r.epoch for r in result.history] == [1, 2, 3, 4]

    def test_best_parameters_are_kept(self, small_split, small_hp, mocker):
        mocker.patch(
            "src.debiased_ranking.training.evaluate",
            side_effect=[_report(v) for v in (0.5, 0.1, 0.1)],
        )
        trainer = Trainer(small_split.train, small_hp, split=small_split)
        first_epoch_only = Trainer(
            small_split.train, replace(small_hp, epochs=1)
        ).fit()
        result = trainer.fit()
        assert result.best_epoch == 1
        assert np.array_equal(result.params.item_factors, first_epoch_only.params.item_factors)


class TestDivergence:
    """Non-finite values abort training."""

    def test_optimizer_error_names_the_epoch(self, small_dataset, small_hp, mocker):
        mocker.patch(
            "src.debiased_ranking.training.adam_step",
            side_effect=FloatingPointError("non-finite gradient at optimizer step 1"),
        )
        with pytest.raises(FloatingPointError, match="epoch 1: non-finite gradient"):
            Trainer(small_dataset, small_hp).fit()

    def test_non_finite_parameters(self, small_dataset, small_hp):
        params = init(40, 60, small_hp)
        # a user without positives is never updated, so nan survives the epoch
        params.user_factors[0, 0] = np.nan
        users, items = small_dataset.pairs()
        keep = users != 0
        sparse = ImplicitDataset.from_pairs(users[keep], items[keep], 40, 60)
        with pytest.raises(FloatingPointError, match="after epoch 1"):
            Trainer(sparse, small_hp).fit(params)
