"""Tests for the synthetic movie, gaze and fMRI generator."""

import filecmp

import numpy as np
import pytest

from core.errors import ValidationError
from services.config import config
from services.synthdata import (
    BlinkSpec,
    HrfSpec,
    ObjectSpec,
    WorldSpec,
    attended_indicator,
    brain_grid,
    convolve_hrf,
    gen_fmri,
    gen_gaze,
    generate_dataset,
    hrf_kernel,
    make_networks,
    make_world,
    render_frame,
    shift_drive,
    subject_schedule,
)


def disk(center, radius=10.0, amplitude=(0.0, 0.0)):
    return ObjectSpec(shape="disk", color=(1.0, 0.2, 0.2), radius=radius, stripe_period=6.0,
                      center=center, amplitude=amplitude, freq_hz=(0.05, 0.05) if any(amplitude) else (0.0, 0.0))


@pytest.fixture
def two_object_world():
    return WorldSpec(
        width=128, height=96, fps=25.0, duration_s=16.0, segment_s=4.0,
        objects=[disk((32.0, 48.0)), disk((96.0, 48.0), amplitude=(10.0, 0.0))],
        schedule=[0, 1, 0, 1],
    )


class TestRender:
    def test_empty_world_is_background(self):
        world = WorldSpec(width=64, height=32, fps=25.0, duration_s=2.0)
        image, masks = render_frame(world, 0.5)
        assert image.shape == (3, 32, 64) and masks.shape == (0, 32, 64)
        assert np.all((image >= 0) & (image <= 1))

    def test_background_is_static(self):
        world = WorldSpec(width=64, height=32, fps=25.0, duration_s=2.0)
        np.testing.assert_array_equal(render_frame(world, 0.0)[0], render_frame(world, 1.9)[0])

    @pytest.mark.parametrize("radius", [8.0, 15.0, 30.0])
    def test_disk_area(self, radius):
        world = WorldSpec(width=128, height=96, fps=25.0, duration_s=1.0, objects=[disk((64.0, 48.0), radius)],
                          schedule=[0])
        _, masks = render_frame(world, 0.0)
        assert masks[0].sum() == pytest.approx(np.pi * radius ** 2, rel=0.10)

    def test_later_object_occludes_earlier(self):
        world = WorldSpec(width=64, height=64, fps=25.0, duration_s=1.0,
                          objects=[disk((32.0, 32.0), 10.0), disk((32.0, 32.0), 5.0)], schedule=[0])
        _, masks = render_frame(world, 0.0)
        assert not np.any(masks[0] & masks[1])
        assert masks[1].sum() > 0

    def test_moving_object_moves(self, two_object_world):
        _, a = render_frame(two_object_world, 0.0)
        _, b = render_frame(two_object_world, 5.0)
        assert not np.array_equal(a[1], b[1])
        np.testing.assert_array_equal(a[0], b[0])

    def test_time_out_of_range(self, two_object_world):
        with pytest.raises(ValidationError):
            render_frame(two_object_world, 16.0)


class TestGaze:
    def test_trivial_world_gaze_at_center(self):
        world = WorldSpec(width=64, height=32, fps=25.0, duration_s=1.0)
        trace = gen_gaze(world, 0.0, 0.0, BlinkSpec(), seed=0)
        assert len(trace) == 1000
        np.testing.assert_array_equal(trace.x, 32.0)
        np.testing.assert_array_equal(trace.y, 16.0)
        assert trace.valid.all()

    def test_follows_attended_object(self, two_object_world):
        trace = gen_gaze(two_object_world, 0.0, 0.0, BlinkSpec(), seed=0)
        assert trace.x[1000] == pytest.approx(32.0)
        x1, _ = two_object_world.objects[1].position(5.0)
        assert trace.x[5000] == pytest.approx(float(x1))

    def test_explicit_gap(self, two_object_world):
        trace = gen_gaze(two_object_world, 2.0, 0.0, BlinkSpec(gaps=[(3000, 400)]), seed=1)
        assert int((~trace.valid).sum()) == 400
        assert np.isnan(trace.x[3000:3400]).all()

    def test_deterministic(self, two_object_world):
        spec = BlinkSpec(rate_per_s=0.5, duration_ms=150)
        a = gen_gaze(two_object_world, 3.0, 0.5, spec, seed=9, offscreen_prob=0.01)
        b = gen_gaze(two_object_world, 3.0, 0.5, spec, seed=9, offscreen_prob=0.01)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.valid, b.valid)

    def test_negative_rate(self, two_object_world):
        with pytest.raises(ValidationError):
            gen_gaze(two_object_world, -1.0, 0.0, BlinkSpec(), seed=0)

    def test_subject_schedule_deviation(self, two_object_world):
        rng = np.random.default_rng(0)
        assert subject_schedule(two_object_world, 0.0, rng) == two_object_world.schedule
        flipped = subject_schedule(two_object_world, 1.0, rng)
        assert all(a != b for a, b in zip(flipped, two_object_world.schedule))


class TestHrf:
    def test_reaches_ninety_percent_of_peak_by_five_seconds(self):
        k = hrf_kernel(HrfSpec(), rate_hz=10.0)
        t = np.arange(len(k)) / 10.0
        assert k[t <= 5.0].max() >= 0.9 * k.max()
        assert k.sum() > 0

    def test_peak_near_configured_time(self):
        k = hrf_kernel(HrfSpec(peak_s=6.0), rate_hz=10.0)
        assert abs(np.argmax(k) / 10.0 - 6.0) < 0.5

    def test_shift_drive_samples(self):
        drive = np.arange(1.0, 11.0)[None]
        out = shift_drive(drive, 4.0, 0.5)
        np.testing.assert_array_equal(out[0, :2], 0.0)
        np.testing.assert_array_equal(out[0, 2:], drive[0, :8])

    def test_shift_longer_than_series(self):
        np.testing.assert_array_equal(shift_drive(np.ones((1, 3)), 10.0, 0.5), 0.0)

    def test_convolution_keeps_onset(self):
        """Peak alignment: an impulse at sample i peaks at sample i."""
        drive = np.zeros((1, 40))
        drive[0, 10] = 1.0
        out = convolve_hrf(drive, hrf_kernel(HrfSpec(), rate_hz=0.5))
        assert int(np.argmax(out[0])) == 10

    @pytest.mark.parametrize("rate_hz", [0.5, 5.0])
    @pytest.mark.parametrize("delay_s", [0.0, 2.0, 4.0, 6.0])
    def test_response_peaks_at_planted_delay(self, delay_s, rate_hz):
        n = int(60 * rate_hz)
        onset = int(10 * rate_hz)
        drive = np.zeros((1, n))
        drive[0, onset] = 1.0
        out = convolve_hrf(shift_drive(drive, delay_s, rate_hz), hrf_kernel(HrfSpec(), rate_hz=rate_hz))
        lag_s = (int(np.argmax(out[0])) - onset) / rate_hz
        assert lag_s == pytest.approx(delay_s)
        assert out[0].max() > 0


class TestFmri:
    def test_zscored_volumes(self, two_object_world):
        nets = make_networks(3, 40, 2, 0.1, np.random.default_rng(0))
        series = gen_fmri(two_object_world, nets, HrfSpec(), 2.0, 0.1, seed=0)
        assert np.abs(series.volumes.mean(axis=0)).max() < 1e-9
        np.testing.assert_allclose(series.volumes.std(axis=0), 1.0, atol=1e-6)

    def test_rank_one_recovery(self):
        world = WorldSpec(width=64, height=64, fps=25.0, duration_s=120.0, segment_s=8.0,
                          objects=[disk((16.0, 16.0), 6.0), disk((48.0, 48.0), 6.0)],
                          schedule=[0, 1, 1, 0, 1, 0, 0, 1, 0, 1, 1, 0, 0, 1, 0])
        nets = make_networks(1, 60, 2, 0.2, np.random.default_rng(1))
        series = gen_fmri(world, nets, HrfSpec(), 2.0, 0.0, seed=0, normalize=False)
        _, _, vt = np.linalg.svd(series.volumes, full_matrices=False)
        corr = np.corrcoef(vt[0], nets.matrix[0])[0, 1]
        assert abs(corr) > 0.99

    def test_counts_for_a_minute(self):
        cfg = config(gen_duration_s=60, gen_objects=2, gen_voxels=16, gen_networks=2)
        world = make_world(cfg, np.random.default_rng(0))
        assert world.frame_count == 1500
        assert attended_indicator(world, None, 0.5).shape == (2, 30)
        nets = make_networks(2, 16, 2, 0.25, np.random.default_rng(0))
        assert len(gen_fmri(world, nets, HrfSpec(), 2.0, 0.1, seed=0)) == 30

    def test_indicator_rows_sum_to_one(self, two_object_world):
        ind = attended_indicator(two_object_world, None, 0.5)
        np.testing.assert_allclose(ind.sum(axis=0), 1.0)

    def test_disjoint_network_supports(self):
        nets = make_networks(4, 40, 2, 0.1, np.random.default_rng(3))
        support = nets.matrix > 0
        assert support.sum(axis=0).max() == 1
        assert nets.keys == ["object:0", "object:1", "mixture", "mixture"]

    def test_needs_voxels(self, two_object_world):
        nets = make_networks(0, 10, 2, 0.1, np.random.default_rng(0))
        with pytest.raises(ValidationError):
            gen_fmri(two_object_world, nets, HrfSpec(), 2.0, 0.1, seed=0)

    def test_brain_grid_is_unique(self):
        coords = brain_grid(30)
        assert coords.shape == (30, 3)
        assert len({tuple(c) for c in coords}) == 30


class TestGenerateDataset:
    def test_manifest_counts(self, tiny_dataset):
        m, cfg = tiny_dataset
        assert m.frame_count == 1000
        assert m.fmri_volumes == 20
        assert m.subject_ids == ["sub01", "sub02"]
        assert (m.root / "ground_truth.json").is_file()

    def test_byte_identical_regeneration(self, tmp_path):
        cfg = config(gen_width=64, gen_height=32, gen_duration_s=6, gen_voxels=8, gen_networks=2,
                     gen_objects=2, gen_subjects=1, crop_size=32, threads=2)
        generate_dataset(cfg, 3, tmp_path / "a")
        generate_dataset(cfg, 3, tmp_path / "b")
        cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
        files = [p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file()]
        assert files
        for rel in files:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel
        assert not cmp.left_only and not cmp.right_only
