"""Training-loop tests: balanced sampling, loss, early stopping, freezing."""

import math

import numpy as np
import pytest
import torch

from glucopred import training as training_mod
from glucopred.data import build_examples, split_by_patient
from glucopred.encoding import encode_examples
from glucopred.model import build_model
from glucopred.pipeline import collect_examples, prepare_arrays
from glucopred.preprocess import fit_normalizer
from glucopred.synth import GeneratorConfig, default_schemas, generate_cohort
from glucopred.training import (
    EarlyStopper,
    TrainConfig,
    TrainingError,
    UndersamplingSchedule,
    cross_entropy,
    fine_tune,
    freeze_parameters,
    train,
    undersample_epoch,
)

from . import oracles
from .conftest import tiny_model_config


class TestUndersampling:
    def _labels(self, counts):
        return np.concatenate([np.full(n, c) for c, n in enumerate(counts)])

    def test_min_count_per_class(self):
        labels = self._labels((100, 50, 10))
        draw = undersample_epoch(labels, seed=0, epoch_index=0)
        assert len(draw) == 30
        drawn = labels[draw]
        assert [(drawn == c).sum() for c in range(3)] == [10, 10, 10]

    def test_no_duplicates_within_epoch(self):
        labels = self._labels((40, 25, 12))
        for epoch in range(6):
            draw = undersample_epoch(labels, seed=3, epoch_index=epoch)
            assert len(set(draw.tolist())) == len(draw)

    def test_deterministic(self):
        labels = self._labels((30, 20, 9))
        a = undersample_epoch(labels, seed=7, epoch_index=4)
        b = undersample_epoch(labels, seed=7, epoch_index=4)
        assert np.array_equal(a, b)

    def test_zero_class_refused_with_name(self):
        labels = self._labels((10, 0, 5))
        with pytest.raises(TrainingError, match="euglycemia"):
            undersample_epoch(labels, seed=0, epoch_index=0)

    def test_majority_coverage_grows_across_epochs(self):
        """The deck cycles through unseen majority examples before reuse:
        distinct coverage after E epochs is min(E*k, N)."""
        labels = self._labels((10, 200, 30))
        schedule = UndersamplingSchedule(labels, seed=1)
        seen = np.zeros(len(labels), dtype=bool)
        for epoch in range(12):
            seen[schedule.epoch(epoch)] = True
            majority_seen = seen[(labels == 1)].sum()
            assert majority_seen == min((epoch + 1) * 10, 200)

    def test_fresh_draw_each_epoch(self):
        labels = self._labels((60, 60, 60))
        schedule = UndersamplingSchedule(labels, seed=2)
        assert not np.array_equal(schedule.epoch(0), schedule.epoch(1))


class TestLoss:
    def test_uniform_logits_is_log3(self):
        logits = torch.zeros(4, 3, dtype=torch.float64)
        one_hot = torch.eye(3, dtype=torch.float64)[torch.tensor([0, 1, 2, 0])]
        assert cross_entropy(logits, one_hot).item() == pytest.approx(math.log(3.0), abs=1e-12)

    def test_confident_correct_loss_vanishes(self):
        logits = torch.tensor([[30.0, 0.0, 0.0]], dtype=torch.float64)
        one_hot = torch.tensor([[1.0, 0.0, 0.0]], dtype=torch.float64)
        assert cross_entropy(logits, one_hot).item() < 1e-12

    def test_gradient_is_softmax_minus_onehot(self):
        logits = torch.randn(5, 3, dtype=torch.float64, requires_grad=True)
        one_hot = torch.eye(3, dtype=torch.float64)[torch.tensor([2, 0, 1, 1, 0])]
        loss = cross_entropy(logits, one_hot)
        loss.backward()
        expected = (torch.softmax(logits.detach(), dim=-1) - one_hot) / 5
        assert torch.allclose(logits.grad, expected, atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        logits = torch.randn(3, 3, dtype=torch.float64, requires_grad=True)
        one_hot = torch.eye(3, dtype=torch.float64)[torch.tensor([0, 2, 1])]

        def loss_fn():
            return cross_entropy(logits, one_hot).item()

        loss = cross_entropy(logits, one_hot)
        loss.backward()
        numeric = oracles.finite_difference_gradients(loss_fn, [logits])
        assert oracles.max_relative_error([logits.grad], numeric) <= 1e-6


class TestEarlyStopper:
    def test_stops_after_exactly_patience_bad_epochs(self):
        stopper = EarlyStopper(patience=5)
        assert stopper.update(1.0)
        for i in range(4):
            assert not stopper.update(1.0 - 0.1 * (i + 1))
            assert not stopper.should_stop
        stopper.update(0.0)
        assert stopper.should_stop

    def test_improvement_resets(self):
        stopper = EarlyStopper(patience=2)
        stopper.update(1.0)
        stopper.update(0.5)
        stopper.update(2.0)
        assert stopper.bad_epochs == 0


@pytest.fixture(scope="module")
def small_run():
    schemas = default_schemas()
    episodes, _, _, _ = generate_cohort(GeneratorConfig(seed=19, n_patients=12))
    train_eps, val_eps, _ = split_by_patient(episodes, (0.6, 0.2, 0.2), seed=0)
    train_examples = collect_examples(train_eps)
    normalizer = fit_normalizer(schemas, train_examples)
    return schemas, train_eps, val_eps, normalizer


class TestTrainLoop:
    def _model(self, schemas, seed=0):
        return build_model(schemas, tiny_model_config(), seed=seed)

    def test_deterministic_history(self, small_run):
        schemas, train_eps, val_eps, normalizer = small_run
        config = TrainConfig(epochs=2, batch_size=8, seed=5)
        r1 = train(self._model(schemas), schemas, normalizer, train_eps, val_eps, config)
        r2 = train(self._model(schemas), schemas, normalizer, train_eps, val_eps, config)
        assert r1.history == r2.history

    def test_best_checkpoint_matches_history_max(self, small_run):
        schemas, train_eps, val_eps, normalizer = small_run
        config = TrainConfig(epochs=3, batch_size=8, seed=1)
        result = train(self._model(schemas), schemas, normalizer, train_eps, val_eps, config)
        best = max(r.val_auroc + r.val_auprc for r in result.history)
        assert result.best_metric == pytest.approx(best, abs=1e-12)

    def test_validation_set_never_resampled(self, small_run):
        schemas, train_eps, val_eps, normalizer = small_run
        config = TrainConfig(epochs=1, batch_size=8, seed=2)
        result = train(self._model(schemas), schemas, normalizer, train_eps, val_eps, config)
        assert result.n_val_examples == len(collect_examples(val_eps))
        assert result.n_train_examples == len(collect_examples(train_eps))

    def test_monotone_degrading_metric_stops_after_patience(self, small_run, monkeypatch):
        schemas, train_eps, val_eps, normalizer = small_run
        values = iter([(0.9 - 0.1 * i, 0.0) for i in range(40)])
        monkeypatch.setattr(training_mod, "_validation_metric", lambda p, l: next(values))
        config = TrainConfig(epochs=40, batch_size=8, patience=5, seed=3)
        result = train(self._model(schemas), schemas, normalizer, train_eps, val_eps, config)
        assert len(result.history) == 6  # first epoch improves, then 5 bad ones
        assert result.history[-1].stopped
        assert result.best_epoch == 0

    def test_freeze_everything_keeps_loss_constant(self, small_run):
        schemas, train_eps, val_eps, normalizer = small_run
        model = self._model(schemas)
        all_groups = tuple(model.parameter_groups())
        config = TrainConfig(epochs=2, batch_size=8, seed=4, freeze_spec=all_groups)

        arrays = prepare_arrays(schemas, train_eps, normalizer)
        examples = collect_examples(train_eps)[:8]
        batch = encode_examples(arrays, schemas, examples, 512)
        model.eval()
        with torch.no_grad():
            before, _, _ = model(batch)
        train(model, schemas, normalizer, train_eps, val_eps, config)
        with torch.no_grad():
            after, _, _ = model(batch)
        assert torch.equal(before, after)

    def test_unknown_freeze_group_refused(self, small_run):
        schemas, train_eps, val_eps, normalizer = small_run
        model = self._model(schemas)
        with pytest.raises(TrainingError, match="wizard"):
            freeze_parameters(model, ("wizard",))


class TestFineTune:
    def test_frozen_groups_byte_identical_and_others_move(self, small_run):
        schemas, train_eps, val_eps, normalizer = small_run
        model = build_model(schemas, tiny_model_config(), seed=0)
        before = {n: p.detach().clone() for n, p in model.named_parameters()}

        config = TrainConfig(epochs=1, batch_size=8, seed=6)
        fine_tune(model, schemas, normalizer, train_eps, val_eps, config)

        groups = model.parameter_groups()
        after = dict(model.named_parameters())
        for group, names in groups.items():
            for name in names:
                same = torch.equal(before[name], after[name].detach())
                if group.startswith("sources."):
                    assert same, f"{name} should be frozen"
                elif group in ("source_encoder", "fusion", "head"):
                    assert not same, f"{name} should have been updated"

    def test_unfrozen_gradients_nonzero(self, small_run):
        schemas, train_eps, val_eps, normalizer = small_run
        model = build_model(schemas, tiny_model_config(), seed=0)
        freeze_parameters(model, ("sources",))
        arrays = prepare_arrays(schemas, train_eps, normalizer)
        examples = collect_examples(train_eps)[:8]
        batch = encode_examples(arrays, schemas, examples, 512)
        logits, _, _ = model(batch)
        one_hot = torch.eye(3)[batch.labels]
        cross_entropy(logits, one_hot).backward()
        for name, param in model.named_parameters():
            if name.startswith("sources."):
                assert param.grad is None or torch.all(param.grad == 0)
        fusion_grads = [
            p.grad.abs().sum().item()
            for n, p in model.named_parameters()
            if n.startswith(("fusion", "source_encoder", "head")) and p.grad is not None
        ]
        assert sum(fusion_grads) > 0

    def test_freeze_spec_must_name_existing_groups(self, small_run):
        schemas, train_eps, val_eps, normalizer = small_run
        model = build_model(schemas, tiny_model_config(), seed=0)
        config = TrainConfig(epochs=1, freeze_spec=("sources", "nonexistent"))
        with pytest.raises(TrainingError, match="nonexistent"):
            fine_tune(model, schemas, normalizer, train_eps, val_eps, config)


class TestTrainConfig:
    def test_patience_floor(self):
        with pytest.raises(TrainingError):
            TrainConfig(patience=0)

    def test_roundtrip(self):
        config = TrainConfig(epochs=7, freeze_spec=("sources",))
        assert TrainConfig.from_dict(config.to_dict()) == config
