# commands/pretrain.py
from __future__ import annotations

import logging

from commands.common import add_dataset, dataset, out_dir
from services.checkpoint import save_checkpoint
from services.reporting import write_rows
from services.schemas import RunConfig
from services.training import autoencoder_checkpoint, pretrain

log = logging.getLogger("avan.cli")

HELP = "pretrain the sparse linear fMRI autoencoder"


def add_arguments(p) -> None:
    add_dataset(p)


def run(args, cfg: RunConfig) -> int:
    m = dataset(args, cfg)
    out = out_dir(args, cfg, "pretrain")
    ae = pretrain(m, cfg)
    path = save_checkpoint(out / "autoencoder.avck", autoencoder_checkpoint(ae, cfg))
    write_rows(out / "pretrain_log.csv", ["epoch", "loss"],
               ({"epoch": i + 1, "loss": f"{v:.8g}"} for i, v in enumerate(ae.history)))
    log.info("[pretrain] checkpoint=%s final_loss=%.6g", path, ae.history[-1] if ae.history else float("nan"))
    print(path)
    return 0
