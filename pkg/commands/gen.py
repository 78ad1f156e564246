# commands/gen.py
from __future__ import annotations

import logging

from commands.common import out_dir
from services.dataset import load_manifest
from services.schemas import RunConfig
from services.synthdata import generate_dataset

log = logging.getLogger("avan.cli")

HELP = "generate a synthetic dataset with planted attention, delay and networks"


def add_arguments(p) -> None:
    pass


def run(args, cfg: RunConfig) -> int:
    out = out_dir(args, cfg, "dataset")
    m = generate_dataset(cfg, cfg.seed, out)
    load_manifest(m.root)
    log.info("[gen] manifest=%s frames=%s subjects=%s", m.root / "manifest.env", m.frame_count, m.subject_ids)
    print(m.root)
    return 0
