# services/synthdata.py
"""
Synthetic benchmark with known ground truth: a procedural movie of textured
objects, per-subject gaze that follows an attended-object schedule, and fMRI
built from sparse planted networks driven by which object is attended,
delayed and smoothed by a double-gamma HRF.
"""
from __future__ import annotations

import hashlib
import json
import logging
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.stats import gamma

from core.errors import DatasetError, ValidationError
from services.alignment import FmriSeries, GazeTrace, zscore_volumes
from services.config import worker_count
from services.dataset import MANIFEST_NAME, write_manifest
from services.formats import write_avfm, write_brain_mask, write_frame, write_gaze_csv
from services.schemas import DatasetManifest, RunConfig, SubjectFiles
from services.worker import parallel_map

log = logging.getLogger("avan.synth")

SACCADE_MS = 250
EXCURSION_MS = 100


# ---------- world ----------

class ObjectSpec(BaseModel):
    shape: Literal["disk", "square"]
    color: Tuple[float, float, float]
    radius: float = Field(..., gt=0)
    stripe_period: float = Field(..., gt=0)
    stripe_angle: float = 0.0
    center: Tuple[float, float]
    amplitude: Tuple[float, float] = (0.0, 0.0)
    freq_hz: Tuple[float, float] = (0.0, 0.0)
    phase: Tuple[float, float] = (0.0, 0.0)

    @property
    def moving(self) -> bool:
        return any(a > 0 for a in self.amplitude)

    def position(self, t):
        t = np.asarray(t, dtype=np.float64)
        x = self.center[0] + self.amplitude[0] * np.sin(2 * np.pi * self.freq_hz[0] * t + self.phase[0])
        y = self.center[1] + self.amplitude[1] * np.sin(2 * np.pi * self.freq_hz[1] * t + self.phase[1])
        return x, y


class WorldSpec(BaseModel):
    width: int
    height: int
    fps: float
    duration_s: float
    objects: List[ObjectSpec] = Field(default_factory=list)
    schedule: List[int] = Field(default_factory=list)  # attended object per segment
    segment_s: float = 8.0
    background_seed: int = 0

    @property
    def frame_count(self) -> int:
        return int(round(self.duration_s * self.fps))

    def segment_of(self, t):
        return np.minimum((np.asarray(t, dtype=np.float64) // self.segment_s).astype(int), len(self.schedule) - 1)

    def attended_at(self, t, schedule: Optional[Sequence[int]] = None):
        """Attended object index at time(s) t; -1 when the world has no objects."""
        sched = np.asarray(schedule if schedule is not None else self.schedule, dtype=int)
        if sched.size == 0:
            return np.full(np.shape(t), -1, dtype=int)
        return sched[self.segment_of(t)]


@lru_cache(maxsize=8)
def _background(seed: int, width: int, height: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    base = 0.35 + 0.08 * np.sin(2 * np.pi * xx / width) * np.cos(2 * np.pi * yy / height)
    tint = rng.uniform(-0.05, 0.05, size=3)
    grain = rng.normal(0.0, 0.02, size=(height, width))
    bg = np.stack([base + tint[c] + grain for c in range(3)])
    bg = np.clip(bg, 0.0, 1.0)
    bg.setflags(write=False)
    return bg


def _object_pixels(obj: ObjectSpec, cx: float, cy: float, width: int, height: int):
    r = obj.radius
    x0, x1 = max(int(np.floor(cx - r)), 0), min(int(np.ceil(cx + r)) + 1, width)
    y0, y1 = max(int(np.floor(cy - r)), 0), min(int(np.ceil(cy + r)) + 1, height)
    if x0 >= x1 or y0 >= y1:
        return None
    yy, xx = np.mgrid[y0:y1, x0:x1].astype(np.float64)
    # pixel centres
    dx, dy = xx + 0.5 - cx, yy + 0.5 - cy
    if obj.shape == "disk":
        inside = dx * dx + dy * dy <= r * r
    else:
        inside = (np.abs(dx) <= r) & (np.abs(dy) <= r)
    u = dx * np.cos(obj.stripe_angle) + dy * np.sin(obj.stripe_angle)
    shade = 0.75 + 0.25 * np.sin(2 * np.pi * u / obj.stripe_period)
    return (y0, y1, x0, x1), inside, shade


def render_frame(world: WorldSpec, t: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Returns (image (3, H, W) in [0, 1], masks (K, H, W) bool). Objects are
    painted in order; a mask keeps only the visible part of its object.
    """
    if not 0 <= t < world.duration_s:
        raise ValidationError(f"t={t} outside [0, {world.duration_s})")
    w, h = world.width, world.height
    image = np.array(_background(world.background_seed, w, h), copy=True)
    masks = np.zeros((len(world.objects), h, w), dtype=bool)
    for k, obj in enumerate(world.objects):
        cx, cy = obj.position(t)
        hit = _object_pixels(obj, float(cx), float(cy), w, h)
        if hit is None:
            continue
        (y0, y1, x0, x1), inside, shade = hit
        for c in range(3):
            region = image[c, y0:y1, x0:x1]
            region[inside] = np.clip(obj.color[c] * shade[inside], 0.0, 1.0)
        masks[:k, y0:y1, x0:x1] &= ~inside
        masks[k, y0:y1, x0:x1] |= inside
    return image, masks


def render_index(world: WorldSpec, index: int) -> Tuple[np.ndarray, np.ndarray]:
    return render_frame(world, index / world.fps)


def make_world(cfg: RunConfig, rng: np.random.Generator) -> WorldSpec:
    w, h = cfg.gen_width, cfg.gen_height
    k_count = cfg.gen_objects
    objects: List[ObjectSpec] = []
    n_moving = int(round(cfg.gen_moving_fraction * k_count))
    for k in range(k_count):
        r = float(rng.uniform(0.08, 0.13) * min(w, h))
        moving = k < n_moving
        ax = float(rng.uniform(0.1, 0.3) * (w - 2 * r)) if moving else 0.0
        ay = float(rng.uniform(0.1, 0.3) * (h - 2 * r)) if moving else 0.0
        cx = float(rng.uniform(r + ax, w - r - ax))
        cy = float(rng.uniform(r + ay, h - r - ay))
        objects.append(ObjectSpec(
            shape="disk" if k % 2 == 0 else "square",
            color=tuple(float(c) for c in rng.uniform(0.2, 1.0, size=3)),
            radius=r,
            stripe_period=float(rng.uniform(4.0, 10.0)),
            stripe_angle=float(rng.uniform(0, np.pi)),
            center=(cx, cy),
            amplitude=(ax, ay),
            freq_hz=(float(rng.uniform(0.02, 0.08)), float(rng.uniform(0.02, 0.08))) if moving else (0.0, 0.0),
            phase=(float(rng.uniform(0, 2 * np.pi)), float(rng.uniform(0, 2 * np.pi))),
        ))
    n_seg = int(np.ceil(cfg.gen_duration_s / cfg.gen_segment_s))
    schedule: List[int] = []
    if k_count:
        # moving objects draw attention twice as often as stationary ones
        weights = np.array([2.0 if o.moving else 1.0 for o in objects])
        schedule = rng.choice(k_count, size=n_seg, p=weights / weights.sum()).astype(int).tolist()
    return WorldSpec(width=w, height=h, fps=cfg.gen_fps, duration_s=cfg.gen_duration_s,
                     objects=objects, schedule=schedule, segment_s=cfg.gen_segment_s,
                     background_seed=int(rng.integers(0, 2 ** 31 - 1)))


def subject_schedule(world: WorldSpec, deviation: float, rng: np.random.Generator) -> List[int]:
    """The group schedule with each segment swapped for another object with probability `deviation`."""
    k_count = len(world.objects)
    out = []
    for g in world.schedule:
        if k_count > 1 and rng.random() < deviation:
            others = [k for k in range(k_count) if k != g]
            out.append(int(others[rng.integers(len(others))]))
        else:
            out.append(int(g))
    return out


# ---------- gaze ----------

class BlinkSpec(BaseModel):
    rate_per_s: float = Field(0.0, ge=0)
    duration_ms: int = Field(150, ge=0)
    gaps: List[Tuple[int, int]] = Field(default_factory=list)  # explicit (start_ms, duration_ms)


def gen_gaze(
    world: WorldSpec,
    jitter_px: float,
    saccade_rate: float,
    blink_spec: BlinkSpec,
    seed: int,
    schedule: Optional[Sequence[int]] = None,
    offscreen_prob: float = 0.0,
    subject_id: str = "",
) -> GazeTrace:
    """1000 Hz trace following the attended object's centre, with jitter, saccades, blinks and excursions."""
    if jitter_px < 0 or saccade_rate < 0 or offscreen_prob < 0:
        raise ValidationError("gaze rates must be >= 0")
    rng = np.random.default_rng(seed)
    n = int(round(world.duration_s * 1000))
    t_ms = np.arange(n, dtype=np.int64)
    t_s = t_ms / 1000.0
    k_count = len(world.objects)

    x = np.full(n, world.width / 2.0)
    y = np.full(n, world.height / 2.0)
    if k_count:
        attended = world.attended_at(t_s, schedule)
        positions = [obj.position(t_s) for obj in world.objects]
        for k in range(k_count):
            sel = attended == k
            x[sel] = positions[k][0][sel]
            y[sel] = positions[k][1][sel]

        if saccade_rate > 0 and k_count > 1:
            n_sacc = rng.poisson(saccade_rate * world.duration_s)
            for start in np.sort(rng.integers(0, n, size=n_sacc)):
                stop = min(start + SACCADE_MS, n)
                cur = attended[start]
                target = int(rng.choice([k for k in range(k_count) if k != cur]))
                x[start:stop] = positions[target][0][start:stop]
                y[start:stop] = positions[target][1][start:stop]

    if jitter_px > 0:
        x = x + rng.normal(0.0, jitter_px, size=n)
        y = y + rng.normal(0.0, jitter_px, size=n)

    if offscreen_prob > 0:
        starts = np.flatnonzero(rng.random(n) < offscreen_prob / EXCURSION_MS)
        for start in starts:
            x[start:start + EXCURSION_MS] = -50.0

    valid = np.ones(n, dtype=bool)
    gaps = list(blink_spec.gaps)
    if blink_spec.rate_per_s > 0 and blink_spec.duration_ms > 0:
        n_blinks = rng.poisson(blink_spec.rate_per_s * world.duration_s)
        gaps += [(int(s), blink_spec.duration_ms) for s in np.sort(rng.integers(0, n, size=n_blinks))]
    for start, dur in gaps:
        valid[start:start + dur] = False
    x[~valid] = np.nan
    y[~valid] = np.nan
    return GazeTrace(t_ms=t_ms, x=x, y=y, valid=valid, subject_id=subject_id)


# ---------- fMRI ----------

class HrfSpec(BaseModel):
    peak_s: float = Field(5.0, gt=0)
    undershoot_s: float = Field(15.0, gt=0)
    ratio: float = Field(6.0, gt=0)
    rate_hz: float = Field(0.5, gt=0)
    length_s: float = Field(32.0, gt=0)


def hrf_kernel(spec: HrfSpec, rate_hz: Optional[float] = None) -> np.ndarray:
    """Double gamma sampled at `rate_hz`: response mode at peak_s, undershoot mode at undershoot_s."""
    rate = rate_hz or spec.rate_hz
    t = np.arange(0.0, spec.length_s + 1e-9, 1.0 / rate)
    return gamma.pdf(t, spec.peak_s + 1.0) - gamma.pdf(t, spec.undershoot_s + 1.0) / spec.ratio


class PlantedNetworks(BaseModel):
    maps: List[List[float]]           # (G, V)
    keys: List[str]                   # "object:<k>" or "mixture"
    mixing: List[List[float]]         # (G, K) weights on the attended-object indicators
    spontaneous: List[float]          # AR(1) amplitude per network (0 for object-keyed)
    ar_coeff: float = 0.9

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.maps, dtype=np.float64)


def make_networks(n_networks: int, n_voxels: int, n_objects: int, sparsity: float,
                  rng: np.random.Generator, ar_coeff: float = 0.9) -> PlantedNetworks:
    """Disjoint sparse supports (so the maps are linearly independent), weights in [0.5, 1]."""
    if n_networks == 0:
        return PlantedNetworks(maps=[], keys=[], mixing=[], spontaneous=[], ar_coeff=ar_coeff)
    size = max(1, int(round(sparsity * n_voxels)))
    if size * n_networks > n_voxels:
        size = n_voxels // n_networks
    if size < 1:
        raise ValidationError(f"{n_networks} networks do not fit in {n_voxels} voxels")
    order = rng.permutation(n_voxels)
    maps = np.zeros((n_networks, n_voxels))
    mixing = np.zeros((n_networks, n_objects))
    keys, spont = [], []
    for g in range(n_networks):
        support = order[g * size:(g + 1) * size]
        maps[g, support] = rng.uniform(0.5, 1.0, size=size)
        if g < n_objects:
            mixing[g, g] = 1.0
            keys.append(f"object:{g}")
            spont.append(0.0)
        else:
            if n_objects:
                mixing[g] = rng.dirichlet(np.ones(n_objects))
            keys.append("mixture")
            spont.append(1.0)
    return PlantedNetworks(maps=maps.tolist(), keys=keys, mixing=mixing.tolist(),
                           spontaneous=spont, ar_coeff=ar_coeff)


def attended_indicator(world: WorldSpec, schedule: Optional[Sequence[int]], rate_hz: float) -> np.ndarray:
    """(K, T): fraction of each fMRI sampling period during which object k is attended."""
    t_count = int(np.floor(world.duration_s * rate_hz + 1e-9))
    k_count = len(world.objects)
    out = np.zeros((k_count, t_count))
    if not k_count or not t_count:
        return out
    frames = np.arange(world.frame_count) / world.fps
    att = world.attended_at(frames, schedule)
    bins = np.minimum((frames * rate_hz).astype(int), t_count - 1)
    counts = np.bincount(bins, minlength=t_count).astype(np.float64)
    for k in range(k_count):
        out[k] = np.bincount(bins[att == k], minlength=t_count) / np.maximum(counts, 1.0)
    return out


def shift_drive(drive: np.ndarray, delay_s: float, rate_hz: float) -> np.ndarray:
    """Delays every row by round(delay_s * rate_hz) samples, zero-filling the start."""
    if delay_s < 0:
        raise ValidationError(f"delay_s must be >= 0, got {delay_s}")
    n = int(round(delay_s * rate_hz))
    out = np.zeros_like(drive)
    if n < drive.shape[-1]:
        out[..., n:] = drive[..., :drive.shape[-1] - n]
    return out


def convolve_hrf(drive: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """
    Row-wise convolution aligned on the kernel's peak sample, so the HRF
    smooths the drive while the shift carries the lag.
    """
    peak = int(np.argmax(kernel))
    t_count = drive.shape[-1]
    return np.stack([np.convolve(row, kernel)[peak:peak + t_count] for row in np.atleast_2d(drive)])


def network_drive(nets: PlantedNetworks, indicator: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    g_count, t_count = len(nets.keys), indicator.shape[1]
    if g_count == 0:
        return np.zeros((0, t_count))
    mixing = np.asarray(nets.mixing, dtype=np.float64).reshape(g_count, indicator.shape[0])
    drive = mixing @ indicator
    spont = np.asarray(nets.spontaneous)
    if np.any(spont > 0):
        innov = rng.normal(0.0, 1.0, size=(g_count, t_count))
        ar = np.zeros((g_count, t_count))
        for i in range(t_count):
            ar[:, i] = (nets.ar_coeff * ar[:, i - 1] if i else 0.0) + innov[:, i]
        drive = drive + spont[:, None] * ar * np.sqrt(1.0 - nets.ar_coeff ** 2)
    return drive


def gen_fmri(
    world: WorldSpec,
    nets: PlantedNetworks,
    hrf: HrfSpec,
    delay_s: float,
    noise_sigma: float,
    seed: int,
    schedule: Optional[Sequence[int]] = None,
    normalize: bool = True,
    n_voxels: Optional[int] = None,
) -> FmriSeries:
    """volume(t) = sum_g activity_g(t) * map_g + noise, activity = shift(drive) convolved with the HRF."""
    if delay_s < 0:
        raise ValidationError(f"delay_s must be >= 0, got {delay_s}")
    rng = np.random.default_rng(seed)
    rate = hrf.rate_hz
    indicator = attended_indicator(world, schedule, rate)
    t_count = indicator.shape[1] if indicator.size else int(np.floor(world.duration_s * rate + 1e-9))
    maps = nets.matrix
    v = maps.shape[1] if maps.size else int(n_voxels or 0)
    if v == 0:
        raise ValidationError("gen_fmri needs planted maps or n_voxels")
    if indicator.size == 0:
        indicator = np.zeros((0, t_count))
    drive = network_drive(nets, indicator, rng)
    activity = convolve_hrf(shift_drive(drive, delay_s, rate), hrf_kernel(hrf)) if len(drive) else drive
    volumes = activity.T @ maps if maps.size else np.zeros((t_count, v))
    if noise_sigma > 0:
        volumes = volumes + rng.normal(0.0, noise_sigma, size=volumes.shape)
    if normalize:
        volumes = zscore_volumes(volumes)
    return FmriSeries.at_rate(volumes, rate)


# ---------- brain mask ----------

def brain_grid(n_voxels: int) -> np.ndarray:
    """First V cells of the smallest cube that holds V voxels, in (i, j, k) order."""
    side = int(np.ceil(n_voxels ** (1.0 / 3.0) - 1e-9))
    while side ** 3 < n_voxels:
        side += 1
    return np.stack(np.unravel_index(np.arange(n_voxels), (side, side, side)), axis=1)


# ---------- dataset ----------

def masks_digest(world: WorldSpec, workers: int = 1) -> str:
    def frame_digest(i: int) -> bytes:
        _, masks = render_index(world, i)
        return hashlib.sha256(np.packbits(masks).tobytes()).digest()

    h = hashlib.sha256()
    for d in parallel_map(frame_digest, range(world.frame_count), workers, label="digest"):
        h.update(d)
    return h.hexdigest()


def generate_dataset(cfg: RunConfig, seed: int, out_dir: Path | str) -> DatasetManifest:
    """
    Writes frames/, gaze/<subject>.csv, fmri/<subject>.avfm, brain_mask.csv,
    ground_truth.json and manifest.env under out_dir. Same (cfg, seed) gives
    the same bytes.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as e:
        raise DatasetError(f"{type(e).__name__}: {e} ({out})") from e

    streams = np.random.SeedSequence(seed).spawn(3 + 2 * cfg.gen_subjects)
    world = make_world(cfg, np.random.default_rng(streams[0]))
    nets = make_networks(cfg.gen_networks, cfg.gen_voxels, cfg.gen_objects, cfg.gen_sparsity,
                         np.random.default_rng(streams[1]), ar_coeff=cfg.gen_spont_ar)
    hrf = HrfSpec(peak_s=cfg.gen_hrf_peak_s, undershoot_s=cfg.gen_hrf_under_s,
                  ratio=cfg.gen_hrf_ratio, rate_hz=cfg.gen_tr_hz)
    dev_rng = np.random.default_rng(streams[2])

    n_frames = world.frame_count
    log.info("[gen] out=%s frames=%s size=%sx%s objects=%s subjects=%s voxels=%s networks=%s delay_s=%s",
             out, n_frames, world.width, world.height, len(world.objects), cfg.gen_subjects,
             cfg.gen_voxels, cfg.gen_networks, cfg.gen_delay_s)

    def write_one(i: int) -> None:
        image, _ = render_index(world, i)
        write_frame(out / "frames" / f"{i:06d}.ppm", image)

    parallel_map(write_one, range(n_frames), worker_count(cfg), label="render")

    blink = BlinkSpec(rate_per_s=cfg.gen_blink_rate, duration_ms=cfg.gen_blink_ms)
    subjects: List[SubjectFiles] = []
    schedules: Dict[str, List[int]] = {}
    t_count = 0
    for s in range(cfg.gen_subjects):
        sid = f"sub{s + 1:02d}"
        sched = subject_schedule(world, cfg.gen_deviation, dev_rng)
        schedules[sid] = sched
        gaze_seed = int(np.random.default_rng(streams[3 + 2 * s]).integers(0, 2 ** 31 - 1))
        fmri_seed = int(np.random.default_rng(streams[4 + 2 * s]).integers(0, 2 ** 31 - 1))
        trace = gen_gaze(world, cfg.gen_jitter_px, cfg.gen_saccade_rate, blink, gaze_seed,
                         schedule=sched, offscreen_prob=cfg.gen_offscreen_prob, subject_id=sid)
        series = gen_fmri(world, nets, hrf, cfg.gen_delay_s, cfg.gen_noise, fmri_seed,
                          schedule=sched, normalize=cfg.gen_normalize, n_voxels=cfg.gen_voxels)
        t_count = len(series)
        write_gaze_csv(out / "gaze" / f"{sid}.csv", trace)
        write_avfm(out / "fmri" / f"{sid}.avfm", series.volumes)
        subjects.append(SubjectFiles(subject_id=sid, gaze=f"gaze/{sid}.csv", fmri=f"fmri/{sid}.avfm"))

    write_brain_mask(out / "brain_mask.csv", brain_grid(cfg.gen_voxels))
    truth = {
        "world": world.model_dump(),
        "schedules": schedules,
        "networks": nets.model_dump(),
        "hrf": hrf.model_dump(),
        "true_delay_s": cfg.gen_delay_s,
        "masks_sha256": masks_digest(world, worker_count(cfg)),
        "seed": seed,
    }
    (out / "ground_truth.json").write_text(json.dumps(truth, sort_keys=True, indent=1), encoding="utf-8")

    manifest = DatasetManifest(
        root=out.resolve(),
        frame_count=n_frames,
        fps=world.fps,
        frame_width=world.width,
        frame_height=world.height,
        screen_width=world.width,
        screen_height=world.height,
        fmri_rate_hz=cfg.gen_tr_hz,
        fmri_volumes=t_count,
        n_voxels=cfg.gen_voxels,
        subjects=subjects,
        brain_mask="brain_mask.csv",
        ground_truth="ground_truth.json",
    )
    write_manifest(out / MANIFEST_NAME, manifest)
    log.info("[gen] done frames=%s volumes=%s subjects=%s", n_frames, t_count, len(subjects))
    return manifest


class GroundTruth(BaseModel):
    world: WorldSpec
    schedules: Dict[str, List[int]]
    networks: PlantedNetworks
    hrf: HrfSpec
    true_delay_s: float
    masks_sha256: str = ""
    seed: int = 0


def load_ground_truth(manifest: DatasetManifest) -> GroundTruth:
    if not manifest.ground_truth:
        raise ValidationError(f"dataset {manifest.root} has no ground-truth sidecar")
    path = manifest.root / manifest.ground_truth
    try:
        return GroundTruth(**json.loads(path.read_text(encoding="utf-8")))
    except (OSError, ValueError) as e:
        raise DatasetError(f"{type(e).__name__}: {e} ({path})") from e
