"""Sequential training: freezing, forgetting, determinism."""

import numpy as np
import pytest

from ksm.data import synthetic_tasks
from ksm.engine import ContractError
from ksm.model import BackboneConfig, ConvSpec, DenseSpec, PoolSpec
from ksm.training import (
    TrainConfig,
    evaluate,
    run_sequence,
    train_initial,
    train_task,
)


def tiny_backbone():
    return BackboneConfig(
        input_shape=(3, 16, 16),
        layers=(ConvSpec(8), PoolSpec(), ConvSpec(12), PoolSpec(), DenseSpec(24)),
    )


def quick_seq(n_tasks=2, seed=0, separation=3.0, train_per_class=40, test_per_class=20):
    return synthetic_tasks(n_tasks, 2, dims=(3, 16, 16), seed=seed,
                           separation=separation, train_per_class=train_per_class,
                           test_per_class=test_per_class)


def quick_cfg(**kw):
    kw.setdefault("epochs", 3)
    kw.setdefault("lr", 1e-3)
    kw.setdefault("milestones", ())
    kw.setdefault("batch_size", 32)
    return TrainConfig(**kw)


class TestConfigValidation:
    def test_strategy_accepts_names(self):
        cfg = TrainConfig(strategy="piggyback")
        assert cfg.strategy.rule == "ste"

    def test_negative_epochs_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=-1)

    def test_zero_batch_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)


class TestInitialTask:
    def test_backbone_freezes_and_artifact_wears_identity_mask(self):
        seq = quick_seq()
        cfg = quick_cfg(epochs=1)
        backbone, artifact, seconds = train_initial(seq, seq.tasks[0], cfg, tiny_backbone())
        assert backbone.frozen
        assert seconds >= 0.0
        assert artifact.backbone_hash == backbone.content_hash()
        for i in backbone.config.conv_specs():
            assert artifact.bits[i].min() == 1
            assert artifact.scales[i].max() == 0.0

    def test_zero_epochs_gives_exact_chance_with_zero_head(self):
        # untrained zero head -> uniform logits -> argmax picks class 0
        seq = quick_seq(test_per_class=25)
        cfg = quick_cfg(epochs=0)
        backbone, artifact, _ = train_initial(seq, seq.tasks[0], cfg, tiny_backbone())
        res = evaluate(backbone, artifact, seq, seq.tasks[0])
        assert res.accuracy == 0.5
        assert res.n == 50

    def test_separable_task_reaches_high_accuracy(self):
        seq = quick_seq(train_per_class=80)
        cfg = quick_cfg(epochs=5)
        backbone, artifact, _ = train_initial(seq, seq.tasks[0], cfg, tiny_backbone())
        res = evaluate(backbone, artifact, seq, seq.tasks[0])
        assert res.accuracy >= 0.95


class TestLaterTasks:
    def test_mask_training_requires_frozen_backbone(self):
        seq = quick_seq()
        cfg = quick_cfg(epochs=1)
        from ksm.model import Backbone

        loose = Backbone.build(tiny_backbone(), seed=0)
        with pytest.raises(ContractError):
            train_task(seq, seq.tasks[1], loose, cfg)

    def test_backbone_bytes_identical_after_mask_task(self):
        seq = quick_seq()
        cfg = quick_cfg(epochs=2)
        backbone, _, _ = train_initial(seq, seq.tasks[0], cfg, tiny_backbone())
        h0 = backbone.content_hash()
        artifact, _ = train_task(seq, seq.tasks[1], backbone, cfg)
        assert backbone.content_hash() == h0
        assert artifact.backbone_hash == h0
        assert artifact.weights_ref is None

    def test_finetune_task_mutates_shared_weights(self):
        seq = quick_seq()
        cfg = quick_cfg(epochs=2, strategy="finetune")
        backbone, _, _ = train_initial(seq, seq.tasks[0], cfg, tiny_backbone())
        clone = backbone.clone(trainable=True)
        h0 = clone.content_hash()
        artifact, _ = train_task(seq, seq.tasks[1], clone, cfg)
        assert clone.content_hash() != h0
        assert artifact.weights_ref is clone
        assert not artifact.bits  # no masks learned

    def test_masks_actually_move_during_training(self):
        seq = quick_seq()
        cfg = quick_cfg(epochs=3, strategy="ksm")
        backbone, _, _ = train_initial(seq, seq.tasks[0], cfg, tiny_backbone())
        artifact, _ = train_task(seq, seq.tasks[1], backbone, cfg)
        moved = [
            float(np.abs(m - cfg.hyper.init_value).max())
            for m in artifact.real_masks.masks.values()
        ]
        assert max(moved) > 1e-4


class TestRunSequence:
    def test_matrix_shape_and_final_column(self):
        seq = quick_seq(3)
        res = run_sequence(seq, quick_cfg(epochs=1), tiny_backbone())
        led = res.ledger
        assert led.task_ids == [1, 2, 3]
        assert len(led.matrix) == 3
        for i, row in enumerate(led.matrix):
            assert len(row) == 3
            assert all(v is None for v in row[:i])
            assert all(v is not None for v in row[i:])
        assert led.accuracies == [row[-1] for row in led.matrix]
        assert len(led.seconds) == 3

    def test_mask_rows_are_constant_finetune_rows_move(self):
        seq = quick_seq(3, train_per_class=60)
        masked = run_sequence(seq, quick_cfg(epochs=2, strategy="ksm"), tiny_backbone())
        for i, row in enumerate(masked.ledger.matrix):
            vals = row[i:]
            assert all(v == vals[0] for v in vals)

    def test_repeat_runs_are_bit_identical(self):
        seq = quick_seq(2)
        cfg = quick_cfg(epochs=2, seed=3)
        a = run_sequence(seq, cfg, tiny_backbone())
        b = run_sequence(seq, cfg, tiny_backbone())
        assert a.ledger.matrix == b.ledger.matrix
        for tid in a.artifacts:
            ma, mb = a.artifacts[tid], b.artifacts[tid]
            np.testing.assert_array_equal(ma.head_w, mb.head_w)
            for i in ma.bits:
                np.testing.assert_array_equal(ma.bits[i], mb.bits[i])

    def test_seed_changes_the_outcome(self):
        seq = quick_seq(2)
        a = run_sequence(seq, quick_cfg(epochs=1, seed=0), tiny_backbone())
        b = run_sequence(seq, quick_cfg(epochs=1, seed=1), tiny_backbone())
        assert a.backbone.content_hash() != b.backbone.content_hash()

    def test_init_task_reorders_training(self):
        seq = quick_seq(3)
        res = run_sequence(seq, quick_cfg(epochs=1), tiny_backbone(), init_task=2)
        assert res.ledger.task_ids == [2, 1, 3]
        with pytest.raises(ValueError):
            run_sequence(seq, quick_cfg(epochs=1), tiny_backbone(), init_task=9)

    def test_every_strategy_completes_a_short_sequence(self):
        seq = quick_seq(2, train_per_class=20, test_per_class=10)
        for name in ("piggyback", "piggyback-kernel", "piggyback-soft",
                     "softmax-binary", "ksm-elementwise", "ksm", "finetune"):
            res = run_sequence(seq, quick_cfg(epochs=1, strategy=name), tiny_backbone())
            assert res.ledger.strategy == name
            assert len(res.ledger.accuracies) == 2


class TestEvaluate:
    def test_finds_task_by_class_ids(self):
        seq = quick_seq(2)
        res = run_sequence(seq, quick_cfg(epochs=1), tiny_backbone())
        art = res.artifacts[2]
        by_none = evaluate(res.backbone, art, seq)
        by_task = evaluate(res.backbone, art, seq, seq.tasks[1])
        assert by_none == by_task

    def test_unknown_classes_rejected(self):
        seq = quick_seq(2)
        res = run_sequence(seq, quick_cfg(epochs=1), tiny_backbone())
        art = res.artifacts[1]
        art.class_ids = (98, 99)
        with pytest.raises(KeyError):
            evaluate(res.backbone, art, seq)
