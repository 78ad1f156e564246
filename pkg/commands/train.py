# commands/train.py
from __future__ import annotations

import logging

from commands.common import add_dataset, autoencoder, dataset, maybe_xlsx, out_dir
from services.checkpoint import save_checkpoint
from services.dataset import build_samples
from services.reporting import STATS_COLUMNS, stats_rows, write_rows
from services.schemas import RunConfig
from services.training import train

log = logging.getLogger("avan.cli")

HELP = "train all five networks jointly on the 70% split"


def add_arguments(p) -> None:
    add_dataset(p)
    p.add_argument("--ae", default=None, help="autoencoder checkpoint used to initialise the fMRI encoder")
    p.add_argument("--steps", type=int, default=None, help="override STEPS")


def run(args, cfg: RunConfig) -> int:
    m = dataset(args, cfg)
    ae = autoencoder(args.ae)
    out = out_dir(args, cfg, "train")
    samples, skipped = build_samples(m, cfg)
    log.info("[train] dataset=%s samples=%s skipped=%s", m.root, len(samples), skipped)
    result = train(samples, cfg, m.n_voxels, ae=ae, log_path=out / "train_log.csv", steps=args.steps)
    path = save_checkpoint(out / "model.avck", result.checkpoint)
    rows = stats_rows(result.stats)
    write_rows(out / "stats.csv", STATS_COLUMNS, rows)
    maybe_xlsx(cfg, out, {"stats": rows})
    log.info("[train] checkpoint=%s step=%s", path, result.state.step)
    print(path)
    return 0
