# services/dataset.py
from __future__ import annotations

import logging
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError as PydanticValidationError

from core.errors import DatasetError, ValidationError
from services.alignment import (
    FmriSeries,
    GazeTrace,
    PairedSample,
    PairingResult,
    clean_gaze,
    gaze_to_frames,
    interpolate_fmri,
    pair_samples,
)
from services.config import read_keyvalue, worker_count
from services.formats import AVFM_MAGIC, read_fmri_series, read_frame, read_gaze_csv
from services.schemas import DatasetManifest, RunConfig, SubjectFiles
from services.worker import parallel_map

log = logging.getLogger("avan.dataset")

MANIFEST_NAME = "manifest.env"

_SCALAR_KEYS = {
    "VERSION": "version",
    "FRAME_DIR": "frame_dir",
    "FRAME_EXT": "frame_ext",
    "FRAME_COUNT": "frame_count",
    "FPS": "fps",
    "FRAME_WIDTH": "frame_width",
    "FRAME_HEIGHT": "frame_height",
    "SCREEN_WIDTH": "screen_width",
    "SCREEN_HEIGHT": "screen_height",
    "FMRI_RATE_HZ": "fmri_rate_hz",
    "FMRI_VOLUMES": "fmri_volumes",
    "N_VOXELS": "n_voxels",
    "BRAIN_MASK": "brain_mask",
    "GROUND_TRUTH": "ground_truth",
}


def manifest_path(dataset: Path | str) -> Path:
    p = Path(dataset)
    return p / MANIFEST_NAME if p.is_dir() else p


def parse_manifest(path: Path | str) -> DatasetManifest:
    """Reads the key-value manifest; unknown keys and bad values are ValidationErrors."""
    path = manifest_path(path)
    if not path.is_file():
        raise ValidationError(f"dataset manifest not found: {path}")
    raw = read_keyvalue(path)
    values: Dict[str, object] = {"root": path.parent.resolve()}
    subject_ids = [s.strip() for s in (raw.pop("SUBJECTS", "") or "").split(",") if s.strip()]
    subjects = []
    for sid in subject_ids:
        gaze = raw.pop(f"GAZE_{sid}", None)
        fmri = raw.pop(f"FMRI_{sid}", None)
        if gaze is None or fmri is None:
            raise ValidationError(f"manifest {path}: subject {sid} needs GAZE_{sid} and FMRI_{sid}")
        subjects.append(SubjectFiles(subject_id=sid, gaze=gaze, fmri=fmri))
    values["subjects"] = subjects
    unknown = []
    for key, val in raw.items():
        field = _SCALAR_KEYS.get(key)
        if field is None:
            unknown.append(key)
        elif val != "":
            values[field] = val
    if unknown:
        raise ValidationError(f"manifest {path}: unknown keys {sorted(unknown)}")
    try:
        return DatasetManifest(**values)
    except PydanticValidationError as e:
        raise ValidationError(f"invalid manifest {path}: {e}") from e


def write_manifest(path: Path, m: DatasetManifest) -> Path:
    lines = [
        f"VERSION={m.version}",
        f"FRAME_DIR={m.frame_dir}",
        f"FRAME_EXT={m.frame_ext}",
        f"FRAME_COUNT={m.frame_count}",
        f"FPS={m.fps:g}",
        f"FRAME_WIDTH={m.frame_width}",
        f"FRAME_HEIGHT={m.frame_height}",
        f"SCREEN_WIDTH={m.screen_width}",
        f"SCREEN_HEIGHT={m.screen_height}",
        f"FMRI_RATE_HZ={m.fmri_rate_hz:g}",
        f"FMRI_VOLUMES={m.fmri_volumes}",
        f"N_VOXELS={m.n_voxels}",
        f"SUBJECTS={','.join(m.subject_ids)}",
    ]
    for s in m.subjects:
        lines.append(f"GAZE_{s.subject_id}={s.gaze}")
        lines.append(f"FMRI_{s.subject_id}={s.fmri}")
    if m.brain_mask:
        lines.append(f"BRAIN_MASK={m.brain_mask}")
    if m.ground_truth:
        lines.append(f"GROUND_TRUTH={m.ground_truth}")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise DatasetError(f"{type(e).__name__}: {e} ({path})") from e
    return path


def _avfm_dims(path: Path) -> Tuple[int, int]:
    with path.open("rb") as f:
        head = f.read(16)
    if len(head) < 16 or head[:4] != AVFM_MAGIC:
        raise ValidationError(f"not an AVFM file: {path}")
    return int.from_bytes(head[8:12], "little"), int.from_bytes(head[12:16], "little")


def validate_manifest(m: DatasetManifest) -> DatasetManifest:
    """Every referenced file exists and every count matches, checked before any compute."""
    problems: List[str] = []
    frame_dir = m.root / m.frame_dir
    if not frame_dir.is_dir():
        problems.append(f"frame dir missing: {frame_dir}")
    else:
        missing = [i for i in range(m.frame_count) if not m.frame_path(i).is_file()]
        if missing:
            head = ", ".join(str(i) for i in missing[:5])
            problems.append(f"{len(missing)} frame file(s) missing (first: {head})")
        found = len(list(frame_dir.glob(f"*.{m.frame_ext}")))
        if not missing and found != m.frame_count:
            problems.append(f"frame dir holds {found} .{m.frame_ext} files, manifest says {m.frame_count}")
    for s in m.subjects:
        gaze = m.root / s.gaze
        fmri = m.root / s.fmri
        if not gaze.is_file():
            problems.append(f"gaze file missing for {s.subject_id}: {gaze}")
        if not fmri.is_file():
            problems.append(f"fMRI file missing for {s.subject_id}: {fmri}")
            continue
        t, v = _avfm_dims(fmri)
        if t != m.fmri_volumes or v != m.n_voxels:
            problems.append(f"fMRI {fmri} is {t}x{v}, manifest says {m.fmri_volumes}x{m.n_voxels}")
    for opt in (m.brain_mask, m.ground_truth):
        if opt and not (m.root / opt).is_file():
            problems.append(f"file missing: {m.root / opt}")
    if problems:
        raise ValidationError(f"dataset {m.root}: " + "; ".join(problems))
    return m


def load_manifest(dataset: Path | str) -> DatasetManifest:
    return validate_manifest(parse_manifest(dataset))


class FrameStore:
    """Decoded frames by index with a bounded LRU cache; safe to share between threads."""

    def __init__(self, manifest: DatasetManifest, dtype=np.float32, cache_size: int = 256):
        self.manifest = manifest
        self.dtype = np.dtype(dtype)
        self._load = lru_cache(maxsize=cache_size)(self._read)

    def _read(self, index: int) -> np.ndarray:
        if not 0 <= index < self.manifest.frame_count:
            raise DatasetError(f"frame {index} out of range [0, {self.manifest.frame_count})")
        frame = read_frame(self.manifest.frame_path(index), dtype=self.dtype)
        frame.setflags(write=False)
        return frame

    def __call__(self, index: int) -> np.ndarray:
        return self._load(int(index))

    def __len__(self) -> int:
        return self.manifest.frame_count


def load_gaze(m: DatasetManifest, subject_id: str) -> GazeTrace:
    try:
        s = m.subject(subject_id)
    except KeyError:
        raise ValidationError(f"unknown subject {subject_id!r}; available: {m.subject_ids}") from None
    return read_gaze_csv(m.root / s.gaze, subject_id=subject_id)


def load_fmri(m: DatasetManifest, subject_id: str) -> FmriSeries:
    try:
        s = m.subject(subject_id)
    except KeyError:
        raise ValidationError(f"unknown subject {subject_id!r}; available: {m.subject_ids}") from None
    return read_fmri_series(m.root / s.fmri, m.fmri_rate_hz)


def subject_frame_gaze(m: DatasetManifest, subject_id: str, cfg: RunConfig) -> List[Optional[Tuple[float, float]]]:
    trace = clean_gaze(load_gaze(m, subject_id), m.screen_width, m.screen_height,
                       window=cfg.median_window, blink_max_ms=cfg.blink_max_ms)
    return gaze_to_frames(trace, m.fps, n_frames=m.frame_count)


def subject_samples(
    m: DatasetManifest,
    subject_id: str,
    cfg: RunConfig,
    frames: FrameStore,
    delay_s: Optional[float] = None,
) -> PairingResult:
    frame_gaze = subject_frame_gaze(m, subject_id, cfg)
    fmri = interpolate_fmri(load_fmri(m, subject_id), cfg.fmri_target_hz or m.fps)
    return pair_samples(
        m.frame_count,
        frame_gaze,
        fmri,
        delay_s=cfg.delay_s if delay_s is None else delay_s,
        crop_size=cfg.crop_size,
        frame_size=(m.frame_width, m.frame_height),
        fps=m.fps,
        subject_id=subject_id,
        loader=frames,
        gaze_scale=(m.frame_width / m.screen_width, m.frame_height / m.screen_height),
    )


def build_samples(
    m: DatasetManifest,
    cfg: RunConfig,
    frames: Optional[FrameStore] = None,
    delay_s: Optional[float] = None,
    subjects: Optional[Sequence[str]] = None,
) -> Tuple[List[PairedSample], Dict[str, int]]:
    """All subjects' paired samples (ordered by subject, frame) plus the summed skip counts."""
    frames = frames or FrameStore(m, dtype=cfg.dtype)
    ids = list(subjects) if subjects else m.subject_ids
    for sid in ids:
        if sid not in m.subject_ids:
            raise ValidationError(f"unknown subject {sid!r}; available: {m.subject_ids}")
    results = parallel_map(lambda sid: subject_samples(m, sid, cfg, frames, delay_s), ids,
                           worker_count(cfg), label="pair")
    samples: List[PairedSample] = []
    skipped: Dict[str, int] = {}
    for r in results:
        samples.extend(r.samples)
        for k, v in r.skipped.items():
            skipped[k] = skipped.get(k, 0) + v
    if not samples:
        raise DatasetError(f"no paired samples in {m.root} (skipped {skipped})")
    return samples, skipped


def stack_batch(samples: Sequence[PairedSample], dtype) -> Tuple[np.ndarray, np.ndarray]:
    images = np.stack([s.image for s in samples]).astype(dtype, copy=False)
    fmri = np.stack([s.fmri for s in samples]).astype(dtype, copy=False)
    return images, fmri
