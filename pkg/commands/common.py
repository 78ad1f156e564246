# commands/common.py
from __future__ import annotations

import logging
import re
from pathlib import Path
from typing import Any, Dict, List, Optional

from core.errors import ValidationError
from models.encoders import Autoencoder
from services.checkpoint import load_checkpoint
from services.dataset import load_manifest
from services.reporting import ensure_reports_dir, write_xlsx
from services.schemas import DatasetManifest, RunConfig
from services.training import autoencoder_from_checkpoint

log = logging.getLogger("avan.cli")


def out_dir(args, cfg: RunConfig, name: str) -> Path:
    """--out when given, else <reports_dir>/<command>."""
    base = Path(args.out) if getattr(args, "out", None) else Path(cfg.reports_dir) / name
    return ensure_reports_dir(base.resolve())


def add_dataset(p) -> None:
    p.add_argument("--dataset", required=True, help="dataset directory or manifest.env")


def add_checkpoint(p) -> None:
    p.add_argument("--checkpoint", required=True, help="trained model checkpoint (.avck)")


def dataset(args, cfg: RunConfig) -> DatasetManifest:
    m = load_manifest(args.dataset)
    if cfg.n_voxels is not None and cfg.n_voxels != m.n_voxels:
        raise ValidationError(f"dataset {m.root} has {m.n_voxels} voxels, config N_VOXELS={cfg.n_voxels}")
    return m


def autoencoder(path: Optional[str]) -> Optional[Autoencoder]:
    if not path:
        return None
    return autoencoder_from_checkpoint(load_checkpoint(path, kind="autoencoder"))


def pairing_config(ckpt_cfg: RunConfig, cfg: RunConfig) -> RunConfig:
    """Shapes and alignment as trained; runtime and evaluation knobs from the current run."""
    keep = ("threads", "log_level", "reports_dir", "report_xlsx", "hit_threshold", "z_threshold",
            "individual_rescale", "batch_size")
    return ckpt_cfg.model_copy(update={k: getattr(cfg, k) for k in keep})


_RANGE = re.compile(r"^(\d+)(?:-(\d+))?$")


def parse_frames(text: Optional[str]) -> List[int]:
    """'0,5,10-12' -> [0, 5, 10, 11, 12]."""
    if not text:
        return []
    out: List[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        m = _RANGE.match(part)
        if not m:
            raise ValidationError(f"bad frame list item {part!r} (use N or N-M)")
        lo = int(m.group(1))
        hi = int(m.group(2)) if m.group(2) else lo
        if hi < lo:
            raise ValidationError(f"bad frame range {part!r}")
        out.extend(range(lo, hi + 1))
    return sorted(set(out))


def parse_delays(text: Optional[str], default: List[float]) -> List[float]:
    if not text:
        return list(default)
    try:
        delays = [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise ValidationError(f"bad delay list {text!r} (use e.g. 0,2,4,6)") from None
    if not delays or any(d < 0 for d in delays):
        raise ValidationError(f"bad delay list {text!r}")
    return delays


def maybe_xlsx(cfg: RunConfig, out: Path, tables: Dict[str, List[Dict[str, Any]]]) -> None:
    if cfg.report_xlsx:
        path = write_xlsx(out / "report.xlsx", tables)
        log.info("[report] xlsx=%s", path)
