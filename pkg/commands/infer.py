# commands/infer.py
from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, List

import numpy as np

from commands.common import add_checkpoint, add_dataset, dataset, out_dir, pairing_config, parse_frames
from core.errors import ValidationError
from services.alignment import PairedSample
from services.config import worker_count
from services.dataset import build_samples
from services.inference import (
    group_attention,
    individual_attention,
    individual_mask,
    load_model,
    relational_map,
)
from services.reporting import write_grid_csv, write_overlays
from services.schemas import RunConfig
from services.worker import parallel_map

log = logging.getLogger("avan.cli")

HELP = "write attended / neglected / overlay images for chosen frames"


def add_arguments(p) -> None:
    add_checkpoint(p)
    add_dataset(p)
    p.add_argument("--subject", default=None, help="subject id (default: first in the manifest)")
    p.add_argument("--frames", default=None, help="frame list, e.g. 0,25,100-110 (default: every 250th paired frame)")
    p.add_argument("--mode", choices=["group", "individual"], default="group")


def _pick(samples: List[PairedSample], frames: List[int], frame_count: int) -> List[PairedSample]:
    by_frame: Dict[int, PairedSample] = {s.frame_index: s for s in samples}
    if not frames:
        return samples[::250] or samples[:1]
    missing = [f for f in frames if f not in by_frame]
    if missing:
        paired = sorted(by_frame)
        raise ValidationError(
            f"frames {missing[:10]} not available; movie has frames 0..{frame_count - 1}, "
            f"{len(paired)} paired for this subject (first {paired[:5]}, last {paired[-5:]})")
    return [by_frame[f] for f in frames]


def run(args, cfg: RunConfig) -> int:
    model, ckpt_cfg = load_model(args.checkpoint)
    run_cfg = pairing_config(ckpt_cfg, cfg)
    m = dataset(args, run_cfg)
    subject = args.subject or m.subject_ids[0]
    if subject not in m.subject_ids:
        raise ValidationError(f"unknown subject {subject!r}; available: {m.subject_ids}")
    samples, _ = build_samples(m, run_cfg, subjects=[subject])
    chosen = _pick(samples, parse_frames(args.frames), m.frame_count)
    out = out_dir(args, cfg, "infer")

    def one(s: PairedSample) -> List[Path]:
        image = np.asarray(s.image, dtype=model.dtype)
        stem = f"{subject}_{s.frame_index:06d}"
        if args.mode == "group":
            _, pair = group_attention(model, image)
            return write_overlays(out, stem, image, pair.attended.data[0], pair.neglected.data[0],
                                  pair.mask.data[0, 0], s.gaze_in_crop)
        rmap = relational_map(model, image, s.fmri)
        attended = individual_attention(image, rmap, cfg.individual_rescale)
        written = write_overlays(out, stem, image, attended, image - attended,
                                 individual_mask(image, rmap), s.gaze_in_crop)
        written.append(write_grid_csv(out / f"{stem}_rmap.csv", rmap.grid))
        return written

    files = [p for paths in parallel_map(one, chosen, worker_count(cfg), label="infer") for p in paths]
    log.info("[infer] subject=%s mode=%s frames=%s files=%s out=%s", subject, args.mode, len(chosen), len(files), out)
    print(out)
    return 0
