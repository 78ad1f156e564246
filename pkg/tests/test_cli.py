"""End-to-end runs of the `avan` command line on the tiny generated dataset."""

import csv
import json

import pytest

from commands.common import parse_delays, parse_frames
from core.errors import ValidationError
from main import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from services.config import dump_config


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


@pytest.fixture(scope="module")
def config_file(tmp_path_factory, dataset_cfg):
    path = tmp_path_factory.mktemp("cfg") / "run.env"
    path.write_text(dump_config(dataset_cfg), encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory, tiny_dataset, config_file):
    """pretrain + train once for every pipeline test in this module."""
    m, _ = tiny_dataset
    work = tmp_path_factory.mktemp("pipeline")
    base = ["--config", str(config_file), "--dataset", str(m.root)]
    assert main(["pretrain", *base, "--out", str(work / "ae")]) == EXIT_OK
    ae = work / "ae" / "autoencoder.avck"
    assert main(["train", *base, "--ae", str(ae), "--steps", "2", "--out", str(work / "train")]) == EXIT_OK
    return work, base, ae


class TestUsageErrors:
    def test_missing_dataset(self, config_file, tmp_path):
        code = main(["train", "--config", str(config_file), "--dataset", str(tmp_path / "nope"),
                     "--out", str(tmp_path / "o")])
        assert code == EXIT_USAGE

    def test_unknown_metric(self):
        with pytest.raises(SystemExit) as exc:
            main(["eval", "--checkpoint", "x.avck", "--dataset", "d", "--metric", "accuracy"])
        assert exc.value.code == 2

    def test_voxel_count_mismatch(self, tiny_dataset, config_file, tmp_path):
        m, _ = tiny_dataset
        cfg = tmp_path / "bad.env"
        cfg.write_text(config_file.read_text() + "N_VOXELS=99\n")
        code = main(["train", "--config", str(cfg), "--dataset", str(m.root), "--out", str(tmp_path / "o")])
        assert code == EXIT_USAGE

    def test_invalid_config_value(self, tiny_dataset, tmp_path):
        m, _ = tiny_dataset
        cfg = tmp_path / "bad.env"
        cfg.write_text("CROP_SIZE=31\n")
        assert main(["train", "--config", str(cfg), "--dataset", str(m.root)]) == EXIT_USAGE

    def test_missing_checkpoint_is_runtime_error(self, tiny_dataset, tmp_path):
        m, _ = tiny_dataset
        code = main(["eval", "--checkpoint", str(tmp_path / "none.avck"), "--dataset", str(m.root),
                     "--metric", "stats", "--out", str(tmp_path / "o")])
        assert code == EXIT_RUNTIME


class TestGen:
    def test_gen_writes_manifest(self, config_file, tmp_path, capsys):
        out = tmp_path / "data"
        assert main(["gen", "--config", str(config_file), "--seed", "3", "--out", str(out)]) == EXIT_OK
        assert (out / "manifest.env").exists()
        assert str(out) in capsys.readouterr().out


class TestPipeline:
    def test_train_outputs(self, trained):
        work, _, ae = trained
        assert ae.exists()
        assert len(read_csv(work / "ae" / "pretrain_log.csv")) == 3
        assert (work / "train" / "model.avck").exists()
        assert len(read_csv(work / "train" / "train_log.csv")) == 2
        assert [r["row"] for r in read_csv(work / "train" / "stats.csv")] == ["target", "train", "test"]

    def test_infer_group(self, trained):
        work, base, _ = trained
        out = work / "infer_group"
        code = main(["infer", "--checkpoint", str(work / "train" / "model.avck"), *base,
                     "--mode", "group", "--out", str(out)])
        assert code == EXIT_OK
        files = sorted(p.name for p in out.iterdir())
        assert files and len(files) % 3 == 0
        assert all(n.startswith("sub01_") for n in files)
        assert sum(n.endswith("_overlay.ppm") for n in files) == len(files) // 3

    def test_infer_individual_writes_maps(self, trained):
        work, base, _ = trained
        out = work / "infer_individual"
        code = main(["infer", "--checkpoint", str(work / "train" / "model.avck"), *base,
                     "--subject", "sub02", "--mode", "individual", "--out", str(out)])
        assert code == EXIT_OK
        names = [p.name for p in out.iterdir()]
        overlays = [n for n in names if n.endswith("_overlay.ppm")]
        assert overlays
        assert len([n for n in names if n.endswith("_rmap.csv")]) == len(overlays)

    def test_infer_unknown_frame(self, trained):
        work, base, _ = trained
        code = main(["infer", "--checkpoint", str(work / "train" / "model.avck"), *base,
                     "--frames", "999999", "--out", str(work / "infer_bad")])
        assert code == EXIT_USAGE

    @pytest.mark.parametrize("metric,outputs", [
        ("stats", ["stats.csv"]),
        ("hitrate", ["hitrate.csv", "missed_frames.json"]),
        ("networks", ["networks.csv", "network_maps.csv", "network_match.json"]),
        ("objects", ["objects.csv"]),
    ])
    def test_eval(self, trained, metric, outputs):
        work, base, _ = trained
        out = work / f"eval_{metric}"
        code = main(["eval", "--checkpoint", str(work / "train" / "model.avck"), *base,
                     "--metric", metric, "--out", str(out)])
        assert code == EXIT_OK
        for name in outputs:
            assert (out / name).exists(), name
        if metric == "stats":
            assert [r["row"] for r in read_csv(out / "stats.csv")] == ["target", "train", "test"]
        if metric == "hitrate":
            modes = {r["mode"] for r in read_csv(out / "hitrate.csv")}
            assert modes == {"group", "individual"}
            assert isinstance(json.loads((out / "missed_frames.json").read_text()), dict)

    def test_sweep_single_delay(self, trained):
        work, base, ae = trained
        out = work / "sweep"
        code = main(["sweep-delay", *base, "--delays", "0", "--ae", str(ae), "--out", str(out)])
        assert code == EXIT_OK
        rows = read_csv(out / "sweep.csv")
        assert len(rows) == 1
        assert float(rows[0]["delay_s"]) == 0.0
        assert (out / "sweep_tracking.json").exists()


class TestArgumentParsing:
    def test_frame_ranges(self):
        assert parse_frames("0,5,10-12,5") == [0, 5, 10, 11, 12]
        assert parse_frames(None) == []

    @pytest.mark.parametrize("text", ["a", "5-3", "1-"])
    def test_bad_frames(self, text):
        with pytest.raises(ValidationError):
            parse_frames(text)

    def test_delays(self):
        assert parse_delays("0, 2,4.5", [9.0]) == [0.0, 2.0, 4.5]
        assert parse_delays("", [0.0, 2.0]) == [0.0, 2.0]
        with pytest.raises(ValidationError):
            parse_delays("2,-1", [])
        with pytest.raises(ValidationError):
            parse_delays("x", [])
