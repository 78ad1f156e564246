"""Tests for gaze cleaning, rate conversion, delay-aware pairing and cropping."""

import numpy as np
import pytest

from core.errors import DatasetError, ValidationError
from services.alignment import (
    FmriSeries,
    GazeSample,
    GazeTrace,
    PairedSample,
    clean_gaze,
    crop_around,
    crop_window,
    frame_count_for,
    gaze_to_frames,
    interpolate_fmri,
    pair_samples,
    split_samples,
    zscore_volumes,
)
from services.formats import read_gaze_csv, write_gaze_csv


def steady_trace(n_ms: int, x: float = 100.0, y: float = 50.0) -> GazeTrace:
    return GazeTrace(t_ms=np.arange(n_ms), x=np.full(n_ms, x), y=np.full(n_ms, y), valid=np.ones(n_ms, bool))


def with_gap(trace: GazeTrace, start: int, length: int) -> GazeTrace:
    out = trace.copy()
    out.x[start:start + length] = np.nan
    out.y[start:start + length] = np.nan
    out.valid[start:start + length] = False
    return out


class TestCleanGaze:
    def test_blink_at_limit_is_bridged(self):
        out = clean_gaze(with_gap(steady_trace(2000), 500, 300), 320, 180)
        assert out.valid.all()
        np.testing.assert_allclose(out.x[500:800], 100.0)

    def test_blink_over_limit_stays_invalid(self):
        out = clean_gaze(with_gap(steady_trace(2000), 500, 301), 320, 180)
        assert not out.valid[500:801].any()
        assert out.valid[:500].all() and out.valid[801:].all()

    def test_bridge_is_linear(self):
        tr = steady_trace(1000)
        tr.x[:500] = 10.0
        tr.x[600:] = 110.0
        tr = with_gap(tr, 500, 100)
        out = clean_gaze(tr, 320, 180, window=1)
        np.testing.assert_allclose(out.x[499:601], np.linspace(10.0, 110.0, 102)[:102], atol=1e-9)

    def test_gap_touching_start_stays_invalid(self):
        out = clean_gaze(with_gap(steady_trace(1000), 0, 50), 320, 180)
        assert not out.valid[:50].any()

    def test_offscreen_marked_invalid(self):
        tr = steady_trace(2000)
        tr.x[100:900] = -50.0
        out = clean_gaze(tr, 320, 180)
        assert not out.valid[100:900].any()

    def test_single_impulse_removed(self):
        tr = steady_trace(1000)
        tr.x[400] = 300.0
        out = clean_gaze(tr, 320, 180)
        np.testing.assert_allclose(out.x, 100.0)

    @staticmethod
    def noisy_trace(seed: int = 0) -> GazeTrace:
        rng = np.random.default_rng(seed)
        tr = steady_trace(1500)
        tr.x += rng.normal(0, 5, 1500)
        tr.y += rng.normal(0, 3, 1500)
        tr = with_gap(tr, 700, 200)
        return with_gap(tr, 1100, 350)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_idempotent_on_plain_samples(self, seed):
        once = clean_gaze(self.noisy_trace(seed).samples(), 320, 180)
        twice = clean_gaze(once.samples(), 320, 180)
        np.testing.assert_array_equal(once.x, twice.x)
        np.testing.assert_array_equal(once.y, twice.y)
        np.testing.assert_array_equal(once.valid, twice.valid)
        assert not once.valid[1100:1450].any()

    def test_idempotent_after_csv_round_trip(self, tmp_path):
        once = clean_gaze(self.noisy_trace(), 320, 180)
        reloaded = read_gaze_csv(write_gaze_csv(tmp_path / "gaze.csv", once))
        again = clean_gaze(reloaded, 320, 180)
        np.testing.assert_array_equal(again.x, reloaded.x)
        np.testing.assert_array_equal(again.valid, reloaded.valid)

    def test_output_is_median_fixed_point(self):
        out = clean_gaze(self.noisy_trace(), 320, 180, window=4)
        assert out.valid[:1100].all()
        span = out.x[:1100]
        # width-5 running median with edge extension leaves the span unchanged
        padded = np.pad(span, 2, mode="edge")
        np.testing.assert_array_equal(np.median(np.lib.stride_tricks.sliding_window_view(padded, 5), axis=1), span)

    def test_unsorted_timestamps(self):
        tr = steady_trace(10)
        tr.t_ms[5] = 2
        with pytest.raises(ValidationError):
            clean_gaze(tr, 320, 180)

    def test_accepts_sample_list(self):
        samples = [GazeSample(t, 5.0, 5.0) for t in range(100)]
        assert len(clean_gaze(samples, 320, 180)) == 100

    def test_input_not_mutated(self):
        tr = with_gap(steady_trace(1000), 200, 100)
        before = tr.x.copy()
        clean_gaze(tr, 320, 180)
        np.testing.assert_array_equal(tr.x, before)


class TestGazeToFrames:
    def test_forty_samples_per_frame(self):
        tr = steady_trace(4000)
        assert frame_count_for(tr, 25.0) == 100
        assert len(gaze_to_frames(tr, 25.0)) == 100

    def test_picks_sample_nearest_midpoint(self):
        tr = GazeTrace(t_ms=np.arange(40), x=np.arange(40, dtype=float), y=np.zeros(40), valid=np.ones(40, bool))
        assert gaze_to_frames(tr, 25.0) == [(20.0, 0.0)]

    def test_tie_goes_to_earlier(self):
        tr = GazeTrace(t_ms=[10, 30], x=[1.0, 2.0], y=[0.0, 0.0], valid=[True, True])
        assert gaze_to_frames(tr, 25.0, n_frames=1) == [(1.0, 0.0)]

    def test_frame_without_valid_gaze(self):
        tr = with_gap(steady_trace(400), 40, 40)
        frames = gaze_to_frames(tr, 25.0)
        assert frames[1] is None and frames[0] is not None and frames[2] is not None

    def test_bad_fps(self):
        with pytest.raises(ValidationError):
            gaze_to_frames(steady_trace(10), 0.0)


class TestFmriResampling:
    def test_grid_length(self):
        series = FmriSeries.at_rate(np.random.default_rng(0).normal(size=(10, 3)), 0.5)
        out = interpolate_fmri(series, 25.0)
        assert len(out) == 451
        assert out.times_s[-1] == pytest.approx(18.0)

    def test_exact_at_acquisitions(self):
        vols = np.random.default_rng(1).normal(size=(10, 4))
        out = interpolate_fmri(FmriSeries.at_rate(vols, 0.5), 25.0)
        np.testing.assert_array_equal(out.volumes[::50], vols)

    def test_midpoint_is_average(self):
        vols = np.array([[0.0, 2.0], [4.0, -2.0]])
        out = interpolate_fmri(FmriSeries.at_rate(vols, 0.5), 25.0)
        np.testing.assert_allclose(out.volumes[25], [2.0, 0.0])

    @pytest.mark.parametrize("seed", range(5))
    def test_stays_within_voxel_range(self, seed):
        rng = np.random.default_rng(seed)
        vols = rng.normal(size=(12, 6)) * rng.uniform(0.1, 10.0, 6)
        out = interpolate_fmri(FmriSeries.at_rate(vols, 0.5, t0=rng.uniform(0, 3)), 25.0).volumes
        assert np.all(out.min(axis=0) >= vols.min(axis=0))
        assert np.all(out.max(axis=0) <= vols.max(axis=0))

    def test_needs_two_volumes(self):
        with pytest.raises(ValidationError):
            interpolate_fmri(FmriSeries.at_rate(np.zeros((1, 3)), 0.5), 25.0)

    def test_mismatched_times(self):
        with pytest.raises(ValidationError):
            FmriSeries(np.arange(3), np.zeros((4, 2)))

    def test_zscore_constant_voxel(self):
        vols = np.column_stack([np.arange(10.0), np.full(10, 3.0)])
        z = zscore_volumes(vols)
        assert abs(z[:, 0].mean()) < 1e-12
        np.testing.assert_array_equal(z[:, 1], 0.0)


def uniform_series(n: int, rate: float = 25.0, voxels: int = 2) -> FmriSeries:
    vols = np.column_stack([np.arange(n, dtype=float)] * voxels)
    return FmriSeries.at_rate(vols, rate)


class TestPairing:
    def test_delay_offsets_by_fifty_frames(self):
        series = uniform_series(451)
        res = pair_samples(451, [(50.0, 50.0)] * 451, series, delay_s=2.0, crop_size=32,
                           frame_size=(128, 96), fps=25.0)
        assert res.samples[0].frame_index == 0
        assert res.samples[0].fmri[0] == 50.0
        assert all(s.fmri[0] == s.frame_index + 50 for s in res)

    def test_last_two_seconds_skipped(self):
        res = pair_samples(451, [(50.0, 50.0)] * 451, uniform_series(451), delay_s=2.0, crop_size=32,
                           frame_size=(128, 96), fps=25.0)
        assert len(res) == 401
        assert res.skipped == {"no_gaze": 0, "fmri_range": 50}
        assert res.skip_count == 50

    def test_frames_without_gaze(self):
        gaze = [None if i % 2 else (10.0, 10.0) for i in range(100)]
        res = pair_samples(100, gaze, uniform_series(200), delay_s=0.0, crop_size=32,
                           frame_size=(128, 96), fps=25.0)
        assert len(res) == 50 and res.skipped["no_gaze"] == 50

    @pytest.mark.parametrize("seed", range(6))
    def test_every_frame_is_paired_or_skipped(self, seed):
        rng = np.random.default_rng(seed)
        n_frames = int(rng.integers(50, 300))
        gaze = [None if rng.uniform() < 0.3 else (float(rng.uniform(0, 128)), float(rng.uniform(0, 96)))
                for _ in range(n_frames)]
        res = pair_samples(n_frames, gaze, uniform_series(int(rng.integers(20, 300))),
                           delay_s=float(rng.uniform(0, 4)), crop_size=32, frame_size=(128, 96), fps=25.0)
        assert len(res) + res.skip_count == n_frames
        frames = [s.frame_index for s in res]
        assert len(set(frames)) == len(frames)
        for s in res:
            assert 0 <= s.gaze_in_crop[0] < 32 and 0 <= s.gaze_in_crop[1] < 32

    def test_gaze_scale_and_crop_origin(self):
        res = pair_samples(1, [(100.0, 60.0)], uniform_series(10), delay_s=0.0, crop_size=32,
                           frame_size=(128, 96), fps=25.0, gaze_scale=(0.5, 0.5))
        s = res.samples[0]
        assert s.crop_origin == (34, 14)
        assert s.gaze_in_crop == (16.0, 16.0)

    def test_rejects_bad_crop_and_delay(self):
        with pytest.raises(ValidationError):
            pair_samples(1, [(1.0, 1.0)], uniform_series(10), 0.0, 48, (128, 96), 25.0)
        with pytest.raises(ValidationError):
            pair_samples(1, [(1.0, 1.0)], uniform_series(10), -1.0, 32, (128, 96), 25.0)

    def test_image_needs_loader(self):
        s = PairedSample(0, "s", np.zeros(2), (1.0, 1.0), (0, 0), 32)
        with pytest.raises(DatasetError):
            s.image

    def test_image_is_cut_on_access(self):
        frame = np.arange(3 * 96 * 128, dtype=np.float64).reshape(3, 96, 128)
        res = pair_samples(1, [(64.0, 48.0)], uniform_series(10), 0.0, 32, (128, 96), 25.0,
                           loader=lambda i: frame)
        np.testing.assert_array_equal(res[0].image, frame[:, 32:64, 48:80])


class TestCrop:
    def test_center_window(self):
        assert crop_window((640.0, 360.0), 224, 1280, 720) == (528, 248)

    def test_corner_clamps(self):
        assert crop_window((0.0, 0.0), 224, 1280, 720) == (0, 0)
        assert crop_window((1279.0, 719.0), 224, 1280, 720) == (1056, 496)

    def test_crop_equal_to_frame_is_identity(self):
        frame = np.random.default_rng(0).uniform(size=(3, 64, 64))
        crop, point = crop_around(frame, (10.0, 50.0), 64)
        np.testing.assert_array_equal(crop, frame)
        assert point == (10.0, 50.0)

    def test_point_inside_crop(self):
        frame = np.zeros((3, 720, 1280))
        crop, (gx, gy) = crop_around(frame, (640.0, 360.0), 224)
        assert crop.shape == (3, 224, 224)
        assert (gx, gy) == (112.0, 112.0)

    def test_crop_larger_than_frame(self):
        with pytest.raises(ValidationError):
            crop_window((0.0, 0.0), 128, 96, 96)


class TestSplit:
    def test_contiguous_seventy_percent(self):
        samples = [PairedSample(i // 2, f"s{i % 2}", np.zeros(1), (0.0, 0.0), (0, 0), 32) for i in range(20)]
        train, test = split_samples(list(reversed(samples)), 0.7)
        assert len(train) == 14 and len(test) == 6
        assert max(s.frame_index for s in train) <= min(s.frame_index for s in test)
        assert [(s.frame_index, s.subject_id) for s in train[:2]] == [(0, "s0"), (0, "s1")]
