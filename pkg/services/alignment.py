# services/alignment.py
"""
Gaze cleaning, resampling between the 1000 Hz tracker, the movie frame rate
and the fMRI sampling rate, delay-aware pairing and gaze-centred cropping.

All functions are pure over their inputs; pairing is deterministic in
(subject, frame_index) order.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from core.errors import DatasetError, ValidationError

log = logging.getLogger("avan.align")

Point = Tuple[float, float]


@dataclass(frozen=True)
class GazeSample:
    t_ms: int
    x_px: float
    y_px: float
    valid: bool = True


@dataclass
class GazeTrace:
    """Columnar gaze recording."""

    t_ms: np.ndarray
    x: np.ndarray
    y: np.ndarray
    valid: np.ndarray
    subject_id: str = ""

    def __post_init__(self):
        self.t_ms = np.asarray(self.t_ms, dtype=np.int64)
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        n = len(self.t_ms)
        if not (len(self.x) == len(self.y) == len(self.valid) == n):
            raise ValidationError("gaze columns differ in length")

    def __len__(self) -> int:
        return len(self.t_ms)

    @classmethod
    def from_samples(cls, samples: Sequence[GazeSample], subject_id: str = "") -> "GazeTrace":
        return cls(
            t_ms=[s.t_ms for s in samples],
            x=[s.x_px for s in samples],
            y=[s.y_px for s in samples],
            valid=[s.valid for s in samples],
            subject_id=subject_id,
        )

    def samples(self) -> List[GazeSample]:
        return [GazeSample(int(t), float(x), float(y), bool(v))
                for t, x, y, v in zip(self.t_ms, self.x, self.y, self.valid)]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t_ms": self.t_ms, "x_px": self.x, "y_px": self.y, "valid": self.valid.astype(int)})

    def copy(self) -> "GazeTrace":
        return replace(self, t_ms=self.t_ms.copy(), x=self.x.copy(), y=self.y.copy(), valid=self.valid.copy())


@dataclass
class FmriSeries:
    times_s: np.ndarray  # (T,)
    volumes: np.ndarray  # (T, V)

    def __post_init__(self):
        self.times_s = np.asarray(self.times_s, dtype=np.float64)
        self.volumes = np.asarray(self.volumes)
        if self.volumes.ndim != 2:
            raise ValidationError(f"fMRI volumes must be (T, V), got shape {self.volumes.shape}")
        if len(self.times_s) != self.volumes.shape[0]:
            raise ValidationError(f"{len(self.times_s)} times for {self.volumes.shape[0]} volumes")

    @classmethod
    def at_rate(cls, volumes: np.ndarray, rate_hz: float, t0: float = 0.0) -> "FmriSeries":
        volumes = np.asarray(volumes)
        return cls(t0 + np.arange(volumes.shape[0]) / rate_hz, volumes)

    def __len__(self) -> int:
        return self.volumes.shape[0]

    @property
    def n_voxels(self) -> int:
        return self.volumes.shape[1]

    @property
    def rate_hz(self) -> float:
        if len(self) < 2:
            return float("nan")
        return float(1.0 / np.median(np.diff(self.times_s)))


@dataclass
class PairedSample:
    """
    One training/evaluation sample. The crop is cut from the frame on access,
    so a sample list over a long movie stays small.
    """

    frame_index: int
    subject_id: str
    fmri: np.ndarray
    gaze_in_crop: Optional[Point]
    crop_origin: Tuple[int, int]
    crop_size: int
    loader: Callable[[int], np.ndarray] = field(repr=False, default=None)

    @property
    def image(self) -> np.ndarray:
        if self.loader is None:
            raise DatasetError(f"sample frame={self.frame_index} has no frame loader")
        x0, y0 = self.crop_origin
        c = self.crop_size
        return self.loader(self.frame_index)[:, y0:y0 + c, x0:x0 + c]


@dataclass
class PairingResult:
    samples: List[PairedSample]
    skipped: Dict[str, int]
    frame_count: int

    def __iter__(self) -> Iterator[PairedSample]:
        return iter(self.samples)

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def skip_count(self) -> int:
        return int(sum(self.skipped.values()))


# ---------- gaze ----------

def _runs(mask: np.ndarray) -> List[Tuple[int, int]]:
    """[start, stop) of every maximal run of True."""
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[0::2].tolist(), edges[1::2].tolist()))


def _median_root(values: np.ndarray, window: int) -> np.ndarray:
    """
    Centered running median of odd width 2 * (window // 2) + 1, repeated until
    the signal stops changing. Span ends are extended with their edge value.
    """
    half = window // 2
    cur = np.asarray(values, dtype=np.float64).copy()
    if half == 0 or len(cur) < 2:
        return cur
    size = 2 * half + 1
    for _ in range(len(cur)):
        padded = pd.Series(np.pad(cur, half, mode="edge"))
        nxt = padded.rolling(size, center=True).median().to_numpy()[half:half + len(cur)]
        if np.array_equal(nxt, cur):
            break
        cur = nxt
    return cur


def clean_gaze(
    trace: GazeTrace | Sequence[GazeSample],
    screen_w: int,
    screen_h: int,
    window: int = 40,
    blink_max_ms: int = 300,
) -> GazeTrace:
    """
    Off-screen samples become invalid; invalid runs lasting at most
    `blink_max_ms` are bridged linearly, longer runs and runs touching either
    end of the recording stay invalid. x and y are then median filtered over
    each valid span until they are a fixed point of the filter, so cleaning an
    already cleaned trace changes nothing.
    """
    if not isinstance(trace, GazeTrace):
        trace = GazeTrace.from_samples(trace)
    t = trace.t_ms
    if len(t) > 1 and np.any(np.diff(t) <= 0):
        raise ValidationError(f"gaze timestamps not strictly increasing (subject={trace.subject_id or '-'})")

    out = trace.copy()
    n = len(out)
    if n == 0:
        return out
    period_ms = float(np.median(np.diff(t))) if n > 1 else 1.0

    x, y = out.x, out.y
    onscreen = np.isfinite(x) & np.isfinite(y) & (x >= 0) & (x < screen_w) & (y >= 0) & (y < screen_h)
    valid = out.valid & onscreen

    bridged = 0
    for s, e in _runs(~valid):
        if s == 0 or e == n:
            continue
        if (e - s) * period_ms > blink_max_ms:
            continue
        for col in (x, y):
            col[s:e] = np.interp(t[s:e], [t[s - 1], t[e]], [col[s - 1], col[e]])
        valid[s:e] = True
        bridged += 1

    for s, e in _runs(valid):
        for col in (x, y):
            col[s:e] = _median_root(col[s:e], window)

    out.valid = valid
    log.debug("[clean-gaze] subject=%s samples=%s bridged=%s invalid=%s",
              trace.subject_id or "-", n, bridged, int((~valid).sum()))
    return out


def frame_count_for(trace: GazeTrace, fps: float, t0_ms: float = 0.0) -> int:
    if len(trace) == 0:
        return 0
    return int(np.floor((trace.t_ms[-1] + 1 - t0_ms) * fps / 1000.0))


def gaze_to_frames(
    trace: GazeTrace,
    fps: float,
    n_frames: Optional[int] = None,
    t0_ms: float = 0.0,
) -> List[Optional[Point]]:
    """Per frame: the valid sample nearest the frame midpoint (earlier one on ties), or None."""
    if fps <= 0:
        raise ValidationError(f"fps must be > 0, got {fps}")
    if n_frames is None:
        n_frames = frame_count_for(trace, fps, t0_ms)
    period = 1000.0 / fps
    keep = trace.valid
    t = trace.t_ms[keep].astype(np.float64)
    xs, ys = trace.x[keep], trace.y[keep]

    out: List[Optional[Point]] = []
    for i in range(n_frames):
        lo_t = t0_ms + i * period
        hi_t = lo_t + period
        lo, hi = np.searchsorted(t, lo_t, side="left"), np.searchsorted(t, hi_t, side="left")
        if lo >= hi:
            out.append(None)
            continue
        mid = lo_t + period / 2.0
        j = lo + int(np.argmin(np.abs(t[lo:hi] - mid)))
        out.append((float(xs[j]), float(ys[j])))
    return out


# ---------- fMRI ----------

def zscore_volumes(volumes: np.ndarray) -> np.ndarray:
    """Per-voxel z-score over time; constant voxels map to 0."""
    z = stats.zscore(np.asarray(volumes, dtype=np.float64), axis=0)
    return np.nan_to_num(z, nan=0.0, posinf=0.0, neginf=0.0)


def interpolate_fmri(series: FmriSeries, target_hz: float) -> FmriSeries:
    """
    Linear per-voxel interpolation onto t0 + k / target_hz for every k whose
    time does not pass the last acquisition. Values at acquisition times are
    the original volumes exactly.
    """
    if len(series) < 2:
        raise ValidationError(f"interpolate_fmri needs >= 2 volumes, got {len(series)}")
    if target_hz <= 0:
        raise ValidationError(f"target rate must be > 0, got {target_hz}")
    t = series.times_s
    span = t[-1] - t[0]
    k = int(np.floor(span * target_hz + 1e-9))
    grid = t[0] + np.arange(k + 1) / target_hz
    vols = series.volumes
    out = np.column_stack([np.interp(grid, t, vols[:, v]) for v in range(vols.shape[1])])
    return FmriSeries(grid, out.astype(vols.dtype, copy=False))


# ---------- cropping / pairing ----------

def crop_window(point: Point, crop_size: int, width: int, height: int) -> Tuple[int, int]:
    if crop_size > width or crop_size > height:
        raise ValidationError(f"crop {crop_size} larger than frame {width}x{height}")
    half = crop_size // 2
    x0 = int(round(point[0])) - half
    y0 = int(round(point[1])) - half
    x0 = min(max(x0, 0), width - crop_size)
    y0 = min(max(y0, 0), height - crop_size)
    return x0, y0


def _clip_into(v: float, lo: int, size: int) -> float:
    # keep the point strictly inside [lo, lo + size)
    return float(min(max(v - lo, 0.0), np.nextafter(float(size), 0.0)))


def crop_around(frame: np.ndarray, point: Point, crop_size: int) -> Tuple[np.ndarray, Point]:
    """frame (C, H, W) -> (crop (C, c, c), gaze position inside the crop)."""
    _, h, w = frame.shape
    x0, y0 = crop_window(point, crop_size, w, h)
    crop = frame[:, y0:y0 + crop_size, x0:x0 + crop_size]
    return crop, (_clip_into(point[0], x0, crop_size), _clip_into(point[1], y0, crop_size))


def pair_samples(
    frame_count: int,
    frame_gaze: Sequence[Optional[Point]],
    fmri25: FmriSeries,
    delay_s: float,
    crop_size: int,
    frame_size: Tuple[int, int],
    fps: float,
    subject_id: str = "",
    loader: Optional[Callable[[int], np.ndarray]] = None,
    gaze_scale: Tuple[float, float] = (1.0, 1.0),
) -> PairingResult:
    """
    Frame i (shown at t = i / fps) pairs with the resampled fMRI sample at
    t + delay_s. Frames without gaze, or whose delayed time falls outside the
    fMRI series, are skipped and counted by reason. `gaze_scale` maps screen
    pixels to frame pixels.
    """
    if crop_size % 32:
        raise ValidationError(f"crop_size must be divisible by 32, got {crop_size}")
    if delay_s < 0:
        raise ValidationError(f"delay_s must be >= 0, got {delay_s}")
    width, height = frame_size
    rate = fmri25.rate_hz
    t0 = float(fmri25.times_s[0])
    n_fmri = len(fmri25)

    samples: List[PairedSample] = []
    skipped = {"no_gaze": 0, "fmri_range": 0}
    for i in range(frame_count):
        g = frame_gaze[i] if i < len(frame_gaze) else None
        if g is None:
            skipped["no_gaze"] += 1
            continue
        j = int(round((i / fps + delay_s - t0) * rate))
        if j < 0 or j >= n_fmri:
            skipped["fmri_range"] += 1
            continue
        point = (g[0] * gaze_scale[0], g[1] * gaze_scale[1])
        x0, y0 = crop_window(point, crop_size, width, height)
        samples.append(PairedSample(
            frame_index=i,
            subject_id=subject_id,
            fmri=fmri25.volumes[j],
            gaze_in_crop=(_clip_into(point[0], x0, crop_size), _clip_into(point[1], y0, crop_size)),
            crop_origin=(x0, y0),
            crop_size=crop_size,
            loader=loader,
        ))
    log.info("[pair] subject=%s frames=%s paired=%s skipped=%s delay_s=%s",
             subject_id or "-", frame_count, len(samples), skipped, delay_s)
    return PairingResult(samples=samples, skipped=skipped, frame_count=frame_count)


def split_samples(samples: Sequence[PairedSample], train_fraction: float = 0.7) -> Tuple[List[PairedSample], List[PairedSample]]:
    """Contiguous time split: the earliest `train_fraction` of samples (by frame, then subject) train."""
    ordered = sorted(samples, key=lambda s: (s.frame_index, s.subject_id))
    n_train = int(round(train_fraction * len(ordered)))
    return ordered[:n_train], ordered[n_train:]
