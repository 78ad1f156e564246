"""Tests for joint training, the training log and autoencoder checkpoints."""

import csv

import numpy as np
import pytest

from core.errors import CheckpointError, DatasetError, NonFiniteError
from services.alignment import split_samples
from services.checkpoint import encode_checkpoint, load_checkpoint, save_checkpoint
from services.dataset import build_samples, stack_batch
from services.evaluation import evaluate_hit_rate, relational_stats
from services.training import (
    LOG_COLUMNS,
    autoencoder_checkpoint,
    autoencoder_from_checkpoint,
    batch_plan,
    dataset_fmri,
    new_state,
    pretrain,
    run_steps,
    train,
    train_step,
)


@pytest.fixture(scope="module")
def paired(tiny_dataset):
    m, cfg = tiny_dataset
    samples, skipped = build_samples(m, cfg)
    return m, cfg, samples, skipped


@pytest.fixture(scope="module")
def ae(tiny_dataset):
    m, cfg = tiny_dataset
    return pretrain(m, cfg)


class TestSamples:
    def test_pairing_on_generated_data(self, paired):
        m, cfg, samples, skipped = paired
        assert len(samples) > 0.5 * 2 * m.frame_count
        assert skipped.get("fmri_range", 0) > 0
        image = samples[0].image
        assert image.shape == (3, cfg.crop_size, cfg.crop_size)
        assert samples[0].fmri.shape == (m.n_voxels,)


class TestPretrain:
    def test_history_and_checkpoint(self, tiny_dataset, ae, tmp_path):
        m, cfg = tiny_dataset
        assert len(ae.history) == cfg.ae_epochs
        assert dataset_fmri(m).shape == (2 * m.fmri_volumes, m.n_voxels)
        path = save_checkpoint(tmp_path / "ae.avck", autoencoder_checkpoint(ae, cfg))
        back = autoencoder_from_checkpoint(load_checkpoint(path, kind="autoencoder"))
        np.testing.assert_array_equal(back.w_e.data, ae.w_e.data)
        assert back.history == ae.history

    def test_wrong_kind(self, paired, tmp_path):
        m, cfg, samples, _ = paired
        result = train(samples, cfg, m.n_voxels, steps=0, with_stats=False)
        with pytest.raises(CheckpointError):
            autoencoder_from_checkpoint(result.checkpoint)


class TestTrain:
    def test_zero_steps_keeps_autoencoder_weights(self, paired, ae):
        m, cfg, samples, _ = paired
        result = train(samples, cfg, m.n_voxels, ae=ae, steps=0, with_stats=False)
        np.testing.assert_array_equal(result.state.model.fmri.w.data, ae.w_e.data)

    def test_autoencoder_shape_must_match(self, paired, ae):
        m, cfg, samples, _ = paired
        with pytest.raises(CheckpointError):
            train(samples, cfg.model_copy(update={"code_dim": cfg.code_dim + 1}), m.n_voxels, ae=ae, steps=0)

    def test_deterministic_with_and_without_prefetch(self, paired):
        m, cfg, samples, _ = paired
        a = train(samples, cfg.model_copy(update={"prefetch": True}), m.n_voxels, steps=3, with_stats=False)
        b = train(samples, cfg.model_copy(update={"prefetch": False}), m.n_voxels, steps=3, with_stats=False)
        for k, v in a.state.model.state_dict().items():
            np.testing.assert_array_equal(v, b.state.model.state_dict()[k])
        assert a.state.history == b.state.history

    def test_checkpoint_is_reproducible(self, paired):
        m, cfg, samples, _ = paired
        a = train(samples, cfg, m.n_voxels, steps=2, with_stats=False)
        b = train(samples, cfg, m.n_voxels, steps=2, with_stats=False)
        assert encode_checkpoint(a.checkpoint) == encode_checkpoint(b.checkpoint)
        assert a.checkpoint.step == 2 and a.checkpoint.header["n_voxels"] == m.n_voxels

    def test_split_and_stats(self, paired):
        m, cfg, samples, _ = paired
        result = train(samples, cfg, m.n_voxels, steps=1)
        assert len(result.train) == round(0.7 * len(samples))
        assert max(s.frame_index for s in result.train) <= min(s.frame_index for s in result.test)
        assert [r.row for r in result.stats] == ["target", "train", "test"]

    def test_train_log(self, paired, tmp_path):
        m, cfg, samples, _ = paired
        path = tmp_path / "train_log.csv"
        train(samples, cfg, m.n_voxels, log_path=path, steps=3, with_stats=False)
        with path.open() as f:
            rows = list(csv.DictReader(f))
        assert list(rows[0]) == LOG_COLUMNS
        assert [int(r["step"]) for r in rows] == [1, 2, 3]

    def test_empty_samples(self, tiny_cfg):
        with pytest.raises(DatasetError):
            train([], tiny_cfg, 24)

    def test_non_finite_batch_leaves_weights(self, paired):
        m, cfg, samples, _ = paired
        state = new_state(cfg, m.n_voxels)
        images, fmri = stack_batch(samples[:4], np.float64)
        fmri = fmri.copy()
        fmri[0, 0] = np.nan
        before = {k: v.copy() for k, v in state.model.state_dict().items() if not k.endswith(("running_mean", "running_var"))}
        with pytest.raises(NonFiniteError):
            train_step(state, images, fmri)
        for k, v in before.items():
            np.testing.assert_array_equal(state.model.state_dict()[k], v)
        assert state.step == 0 and state.adam.t == 0

    def test_zero_learning_rate_keeps_parameters(self, paired):
        m, cfg, samples, _ = paired
        state = new_state(cfg.model_copy(update={"lr": 0.0}), m.n_voxels)
        before = {k: p.data.copy() for k, p in state.model.named_parameters().items()}
        for i in range(3):
            train_step(state, *stack_batch(samples[4 * i:4 * i + 4], np.float64))
        for k, p in state.model.named_parameters().items():
            np.testing.assert_array_equal(p.data, before[k])
        assert state.step == 3

    def test_batch_plan(self):
        plan = batch_plan(np.random.default_rng(0), 10, 4, 5)
        assert len(plan) == 5 and all(len(p) == 4 and len(set(p)) == 4 for p in plan)
        assert len(batch_plan(np.random.default_rng(0), 3, 8, 1)[0]) == 3


@pytest.mark.slow
class TestConvergence:
    def test_loss_goes_down(self, paired, ae):
        m, cfg, samples, _ = paired
        cfg = cfg.model_copy(update={"lr": 1e-3, "batch_size": 8})
        result = train(samples, cfg, m.n_voxels, ae=ae, steps=150, with_stats=False)
        losses = [h["loss"] for h in result.state.history]
        assert np.mean(losses[-20:]) < np.mean(losses[:20])


@pytest.mark.slow
class TestAutoencoderInit:
    def test_lower_loss_at_start_and_after_hundred_steps(self, desk_dataset, desk_cfg, desk_ae, desk_samples):
        train_set, _ = split_samples(desk_samples, desk_cfg.train_fraction)
        losses = {}
        for label, ae in (("ae", desk_ae), ("random", None)):
            state = new_state(desk_cfg, desk_dataset.n_voxels, ae=ae)
            run_steps(state, train_set, desk_cfg, 110)
            losses[label] = [h["loss"] for h in state.history]
        # step-1 metrics describe the batch before any update
        assert losses["ae"][0] < losses["random"][0]
        assert np.mean(losses["ae"][90:110]) < np.mean(losses["random"][90:110])


@pytest.mark.slow
class TestDeskScale:
    def test_relational_pattern_on_test_split(self, desk_run):
        test_row = [r for r in desk_run.stats if r.row == "test"][0]
        assert test_row.positive >= 0.5
        assert test_row.negative <= -0.5
        assert abs(test_row.reg_original) <= 0.3
        assert abs(test_row.reg_blank) <= 0.3

    def test_group_hit_rate_beats_chance(self, desk_run, desk_cfg):
        report = evaluate_hit_rate(desk_run.state.model, desk_run.test, desk_cfg, split="test", mode="group")
        assert report.rate >= 1.5 * report.chance

    def test_individual_hit_rate_beats_chance(self, desk_run, desk_cfg):
        part = desk_run.test[::10]
        report = evaluate_hit_rate(desk_run.state.model, part, desk_cfg, split="test", mode="individual")
        assert report.rate >= 1.2 * report.chance

    def test_attended_code_reconstructs_closer(self, desk_run, desk_cfg):
        stats = relational_stats(desk_run.state.model, desk_run.test, desk_cfg.batch_size, split="test")
        assert stats.d_a < stats.d_n
