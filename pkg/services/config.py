# services/config.py
from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional

import psutil
from dotenv import dotenv_values, load_dotenv
from pydantic import ValidationError as PydanticValidationError

from core.errors import ValidationError
from services.schemas import RunConfig

load_dotenv()

log = logging.getLogger("avan.config")

_BOOL = {"1", "true", "yes", "on", "y", "t"}


def _as_bool(v: Optional[str], default: bool = False) -> bool:
    if v is None:
        return default
    return v.strip().lower() in _BOOL


def _as_int(v: Optional[str], default: Optional[int]) -> Optional[int]:
    try:
        return int(v)
    except Exception:
        return default


def read_keyvalue(path: Path | str) -> Dict[str, str]:
    """KEY=VALUE file (dotenv grammar). Missing file -> ValidationError."""
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"config file not found: {p}")
    try:
        raw = dotenv_values(p)
    except Exception as e:
        raise ValidationError(f"{type(e).__name__}: {e} ({p})") from e
    return {k: (v if v is not None else "") for k, v in raw.items()}


def _env_overrides() -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    threads = _as_int(os.getenv("AVAN_THREADS"), None)
    if threads is not None:
        out["threads"] = threads
    if os.getenv("AVAN_LOG_LEVEL"):
        out["log_level"] = os.getenv("AVAN_LOG_LEVEL")
    if os.getenv("AVAN_REPORTS_DIR"):
        out["reports_dir"] = os.getenv("AVAN_REPORTS_DIR")
    if os.getenv("AVAN_REPORT_XLSX"):
        out["report_xlsx"] = _as_bool(os.getenv("AVAN_REPORT_XLSX"))
    return out


def config(path: Optional[Path | str] = None, **overrides: Any) -> RunConfig:
    """
    Defaults <- config file <- AVAN_* environment <- explicit overrides.
    Keys in the file are upper case; anything RunConfig does not know is an error.
    """
    values: Dict[str, Any] = {}
    if path is not None:
        for key, val in read_keyvalue(path).items():
            values[key.strip().lower()] = val
    values.update(_env_overrides())
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        cfg = RunConfig(**values)
    except PydanticValidationError as e:
        raise ValidationError(f"invalid config{f' {path}' if path else ''}: {e}") from e
    log.debug("[config] path=%s seed=%s dtype=%s", path, cfg.seed, cfg.dtype)
    return cfg


def worker_count(cfg: Optional[RunConfig] = None) -> int:
    """Physical cores (psutil), capped by THREADS / AVAN_THREADS."""
    cores = psutil.cpu_count(logical=False) or psutil.cpu_count() or 1
    cap = cfg.threads if cfg is not None and cfg.threads else _as_int(os.getenv("AVAN_THREADS"), None)
    return max(1, min(cores, cap) if cap else cores)


def dump_config(cfg: RunConfig) -> str:
    """Inverse of the file grammar: one KEY=VALUE line per field, sorted."""
    lines = []
    for key, val in sorted(cfg.model_dump().items()):
        if val is None:
            continue
        if isinstance(val, list):
            val = ",".join(str(x) for x in val)
        elif isinstance(val, bool):
            val = "true" if val else "false"
        lines.append(f"{key.upper()}={val}")
    return "\n".join(lines) + "\n"
