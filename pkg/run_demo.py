# run_demo.py
import logging
import sys
from pathlib import Path

from services.alignment import split_samples
from services.checkpoint import save_checkpoint
from services.config import config
from services.dataset import build_samples, load_manifest
from services.evaluation import evaluate_hit_rate
from services.reporting import STATS_COLUMNS, stats_rows, write_rows
from services.synthdata import generate_dataset
from services.training import autoencoder_checkpoint, pretrain, train

DEMO = {
    "gen_duration_s": 120,
    "gen_subjects": 1,
    "ae_epochs": 40,
    "steps": 300,
    "log_every": 25,
}


def main(out: str = "reports/demo") -> None:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s [%(levelname)s] %(threadName)s %(message)s")
    cfg = config(sys.argv[1] if len(sys.argv) > 1 else None, **DEMO)
    root = Path(out)

    print("[1/4] Generating synthetic movie, gaze and fMRI …")
    m = load_manifest(generate_dataset(cfg, cfg.seed, root / "dataset").root)
    print(f"      frames={m.frame_count} subjects={m.subject_ids} voxels={m.n_voxels}")

    print("[2/4] Pretraining the fMRI autoencoder …")
    ae = pretrain(m, cfg)
    save_checkpoint(root / "autoencoder.avck", autoencoder_checkpoint(ae, cfg))
    print(f"      loss {ae.history[0]:.4g} -> {ae.history[-1]:.4g}")

    print("[3/4] Training …")
    samples, skipped = build_samples(m, cfg)
    result = train(samples, cfg, m.n_voxels, ae=ae, log_path=root / "train_log.csv")
    save_checkpoint(root / "model.avck", result.checkpoint)
    write_rows(root / "stats.csv", STATS_COLUMNS, stats_rows(result.stats))
    for row in result.stats:
        print(f"      {row.row:<6} positive={row.positive:+.3f} negative={row.negative:+.3f} "
              f"regularization={row.regularization:+.3f}")

    print("[4/4] Hit rate on the test split …")
    _, test = split_samples(samples, cfg.train_fraction)
    report = evaluate_hit_rate(result.state.model, test, cfg, split="test", mode="group")
    print(f"      rate={report.rate:.3f} chance={report.chance:.3f} ({report.hits}/{report.total})")


if __name__ == "__main__":
    main()
