# services/formats.py
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import pandas as pd
from PIL import Image

from core.errors import DatasetError, ValidationError
from services.alignment import FmriSeries, GazeTrace

AVFM_MAGIC = b"AVFM"
AVFM_VERSION = 1
_AVFM_HEADER = struct.Struct("<4sIII")

GAZE_COLUMNS = ["t_ms", "x_px", "y_px", "valid"]


def _io_error(e: Exception, path: Path) -> DatasetError:
    return DatasetError(f"{type(e).__name__}: {e} ({path})")


# ---------- frames ----------

def image_to_uint8(image: np.ndarray) -> np.ndarray:
    """(3, H, W) floats in [0, 1] -> (H, W, 3) bytes."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.round(arr * 255.0).astype(np.uint8).transpose(1, 2, 0)


def write_frame(path: Path, image: np.ndarray) -> Path:
    """PPM (P6) or PNG, picked from the suffix."""
    path = Path(path)
    fmt = "PNG" if path.suffix.lower() == ".png" else "PPM"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(image_to_uint8(image)).save(path, format=fmt)
    except OSError as e:
        raise _io_error(e, path) from e
    return path


def read_frame(path: Path, dtype=np.float32) -> np.ndarray:
    """Any RGB image Pillow can decode -> (3, H, W) in [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as e:
        raise _io_error(e, path) from e
    return (arr.transpose(2, 0, 1).astype(np.float64) / 255.0).astype(dtype)


# ---------- fMRI matrix ----------

def write_avfm(path: Path, volumes: np.ndarray) -> Path:
    path = Path(path)
    vols = np.ascontiguousarray(volumes, dtype="<f4")
    if vols.ndim != 2:
        raise ValidationError(f"AVFM expects (T, V), got {vols.shape}")
    t, v = vols.shape
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("wb") as f:
            f.write(_AVFM_HEADER.pack(AVFM_MAGIC, AVFM_VERSION, t, v))
            f.write(vols.tobytes(order="C"))
    except OSError as e:
        raise _io_error(e, path) from e
    return path


def read_avfm(path: Path) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise _io_error(e, path) from e
    if len(raw) < _AVFM_HEADER.size:
        raise DatasetError(f"truncated AVFM header ({path})")
    magic, version, t, v = _AVFM_HEADER.unpack_from(raw)
    if magic != AVFM_MAGIC:
        raise DatasetError(f"bad AVFM magic {magic!r} ({path})")
    if version != AVFM_VERSION:
        raise DatasetError(f"unsupported AVFM version {version} ({path})")
    body = raw[_AVFM_HEADER.size:]
    if len(body) != 4 * t * v:
        raise DatasetError(f"AVFM body has {len(body)} bytes, header says {t}x{v} floats ({path})")
    return np.frombuffer(body, dtype="<f4").reshape(t, v).astype(np.float32)


def read_fmri_series(path: Path, rate_hz: float) -> FmriSeries:
    return FmriSeries.at_rate(read_avfm(path), rate_hz)


# ---------- gaze ----------

def write_gaze_csv(path: Path, trace: GazeTrace) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        trace.to_frame().to_csv(path, index=False, float_format="%.3f", lineterminator="\n")
    except OSError as e:
        raise _io_error(e, path) from e
    return path


def read_gaze_csv(path: Path, subject_id: str = "") -> GazeTrace:
    path = Path(path)
    try:
        df = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise _io_error(e, path) from e
    missing = [c for c in GAZE_COLUMNS if c not in df.columns]
    if missing:
        raise DatasetError(f"gaze CSV missing columns {missing} ({path})")
    return GazeTrace(
        t_ms=df["t_ms"].to_numpy(np.int64),
        x=df["x_px"].to_numpy(np.float64),
        y=df["y_px"].to_numpy(np.float64),
        valid=df["valid"].astype(int).to_numpy() != 0,
        subject_id=subject_id,
    )


# ---------- brain mask ----------

def write_brain_mask(path: Path, coords: np.ndarray) -> Path:
    """coords (V, 3) integer grid positions; row v places voxel v."""
    path = Path(path)
    df = pd.DataFrame(np.asarray(coords, dtype=int), columns=["i", "j", "k"])
    df.insert(0, "voxel", np.arange(len(df)))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(path, index=False, lineterminator="\n")
    except OSError as e:
        raise _io_error(e, path) from e
    return path


def read_brain_mask(path: Path) -> np.ndarray:
    path = Path(path)
    try:
        df = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise _io_error(e, path) from e
    return df.sort_values("voxel")[["i", "j", "k"]].to_numpy(int)
