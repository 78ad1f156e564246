"""Tests for run configuration: file grammar, environment overrides and validation."""

import pytest

from core.errors import ValidationError
from services.config import config, dump_config, read_keyvalue, worker_count
from services.schemas import RunConfig


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for key in ("AVAN_THREADS", "AVAN_LOG_LEVEL", "AVAN_REPORTS_DIR", "AVAN_REPORT_XLSX"):
        monkeypatch.delenv(key, raising=False)


class TestConfig:
    def test_defaults(self):
        cfg = config()
        assert cfg.lr == 1e-4 and cfg.beta1 == 0.9 and cfg.beta2 == 0.999 and cfg.adam_eps == 1e-8
        assert cfg.margin == 0.1 and cfg.l1_coeff == 5e-6
        assert cfg.median_window == 40 and cfg.blink_max_ms == 300
        assert cfg.train_fraction == 0.7 and cfg.hit_threshold == 0.5

    def test_file_values(self, tmp_path):
        p = tmp_path / "run.env"
        p.write_text("LR=0.001\nWIDTHS=4,4,8,8,16\nZERO_HEAD=yes\n# comment\nSEED=7\n")
        cfg = config(p)
        assert cfg.lr == 0.001 and cfg.widths == [4, 4, 8, 8, 16] and cfg.zero_head and cfg.seed == 7

    def test_overrides_beat_file(self, tmp_path):
        p = tmp_path / "run.env"
        p.write_text("SEED=7\n")
        assert config(p, seed=3).seed == 3
        assert config(p, seed=None).seed == 7

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "run.env"
        p.write_text("LEARNING_RATE=0.1\n")
        with pytest.raises(ValidationError):
            config(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ValidationError):
            read_keyvalue(tmp_path / "nope.env")

    @pytest.mark.parametrize("bad", [{"crop_size": 48}, {"widths": [4, 4]}, {"lr": -1.0},
                                     {"sweep_delays": []}, {"dtype": "float16"}])
    def test_invalid_values(self, bad):
        with pytest.raises(ValidationError):
            config(**bad)

    def test_crop_must_fit_generated_frame(self):
        with pytest.raises(ValidationError):
            config(crop_size=256, gen_width=320, gen_height=180)

    def test_env_overrides(self, monkeypatch):
        monkeypatch.setenv("AVAN_THREADS", "3")
        monkeypatch.setenv("AVAN_LOG_LEVEL", "debug")
        monkeypatch.setenv("AVAN_REPORT_XLSX", "true")
        cfg = config()
        assert cfg.threads == 3 and cfg.log_level == "DEBUG" and cfg.report_xlsx

    def test_dump_round_trip(self, tmp_path):
        cfg = config(seed=11, widths=[2, 4, 8, 8, 8], zero_head=True)
        p = tmp_path / "dump.env"
        p.write_text(dump_config(cfg))
        assert config(p) == cfg

    def test_model_dims(self):
        dims = RunConfig().model_dims()
        assert set(dims) == {"crop_size", "code_dim", "widths", "hidden"}


class TestWorkerCount:
    def test_capped_by_threads(self):
        assert worker_count(config(threads=1)) == 1

    def test_env_cap(self, monkeypatch):
        monkeypatch.setenv("AVAN_THREADS", "1")
        assert worker_count() == 1

    def test_at_least_one(self):
        assert worker_count(config()) >= 1
