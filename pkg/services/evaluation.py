# services/evaluation.py
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import zscore

from core.errors import AvanError, ShapeError, ValidationError
from models.avan import AvanModel
from models.encoders import Autoencoder
from services.alignment import PairedSample
from services.config import worker_count
from services.dataset import FrameStore, build_samples
from services.inference import group_masks, individual_mask, relational_map, score_samples
from services.schemas import DatasetManifest, HitRateReport, RelationalStatsRow, RunConfig, SweepRow
from services.synthdata import WorldSpec, render_index
from services.tracking import DONE, FAILED, delay_key, done_results, init_tracking, mark_status
from services.worker import parallel_map, run_each

log = logging.getLogger("avan.eval")

# (gaze (x, y) in mask pixels, mask (H, W), optional frame index)
HitSample = Tuple


# ---------- hit rate ----------

def hit_rate(samples: Sequence[HitSample], threshold: float = 0.5, split: str = "all",
             mode: str = "group") -> HitRateReport:
    """
    A gaze point hits when the mask value at its pixel is >= threshold. The
    chance baseline is the mean fraction of mask pixels at or above threshold,
    i.e. the expected rate of uniformly placed gaze.
    """
    if not samples:
        raise ValidationError("hit_rate needs at least one sample")
    hits = 0
    area = 0.0
    missed: List[int] = []
    for n, item in enumerate(samples):
        (x, y), mask = item[0], np.asarray(item[1])
        frame = int(item[2]) if len(item) > 2 and item[2] is not None else n
        h, w = mask.shape
        if not (0 <= x < w and 0 <= y < h):
            raise ValidationError(f"gaze ({x:.1f}, {y:.1f}) outside {w}x{h} mask (frame {frame})")
        if mask[int(np.floor(y)), int(np.floor(x))] >= threshold:
            hits += 1
        else:
            missed.append(frame)
        area += float(np.mean(mask >= threshold))
    total = len(samples)
    return HitRateReport(hits=hits, total=total, rate=hits / total, chance=area / total,
                         split=split, mode=mode, missed_frames=missed)


def group_hit_samples(model: AvanModel, samples: Sequence[PairedSample], batch_size: int = 16) -> List[HitSample]:
    out: List[HitSample] = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        masks = group_masks(model, np.stack([s.image for s in chunk]), batch_size)
        out.extend((s.gaze_in_crop, m, s.frame_index) for s, m in zip(chunk, masks))
    return out


def individual_hit_samples(model: AvanModel, samples: Sequence[PairedSample], workers: int = 1) -> List[HitSample]:
    def one(s: PairedSample) -> HitSample:
        image = s.image
        return s.gaze_in_crop, individual_mask(image, relational_map(model, image, s.fmri)), s.frame_index

    return parallel_map(one, list(samples), workers, label="individual")


def evaluate_hit_rate(model: AvanModel, samples: Sequence[PairedSample], cfg: RunConfig,
                      split: str = "test", mode: str = "group") -> HitRateReport:
    usable = [s for s in samples if s.gaze_in_crop is not None]
    if mode == "group":
        items = group_hit_samples(model, usable, cfg.batch_size)
    elif mode == "individual":
        items = individual_hit_samples(model, usable, worker_count(cfg))
    else:
        raise ValidationError(f"unknown attention mode {mode!r} (group | individual)")
    report = hit_rate(items, cfg.hit_threshold, split=split, mode=mode)
    log.info("[hitrate] split=%s mode=%s hits=%s total=%s rate=%.4f chance=%.4f",
             split, mode, report.hits, report.total, report.rate, report.chance)
    return report


# ---------- relational statistics ----------

@dataclass
class RelationalStats:
    split: str
    samples: int
    r_af: float
    r_nf: float
    r_anf: float
    r_bf: float
    d_a: float
    d_n: float

    def row(self) -> RelationalStatsRow:
        return RelationalStatsRow(row=self.split, positive=self.r_af, negative=self.r_nf,
                                  reg_original=self.r_anf, reg_blank=self.r_bf,
                                  regularization=(self.r_anf + self.r_bf) / 2.0, samples=self.samples)


def relational_stats(model: AvanModel, samples: Sequence[PairedSample], batch_size: int = 16,
                     split: str = "all") -> RelationalStats:
    """Means of the four relational outputs and both triplet distances over a split."""
    scores = score_samples(model, samples, batch_size)
    if not scores:
        nan = float("nan")
        return RelationalStats(split, 0, nan, nan, nan, nan, nan, nan)
    means = {k: float(np.mean(v)) for k, v in scores.items()}
    return RelationalStats(split=split, samples=len(samples), **means)


TARGET_ROW = RelationalStatsRow(row="target", positive=1.0, negative=-1.0,
                                reg_original=0.0, reg_blank=0.0, regularization=0.0)


def stats_table(*splits: RelationalStats) -> List[RelationalStatsRow]:
    """target / train / test rows in the Positive, Negative, Regularization layout."""
    return [TARGET_ROW] + [s.row() for s in splits]


# ---------- delay sweep ----------

def _sweep_one(m: DatasetManifest, cfg: RunConfig, delay_s: float, ae: Optional[Autoencoder],
               frames: FrameStore) -> Dict[str, float]:
    from services.training import train

    samples, skipped = build_samples(m, cfg, frames=frames, delay_s=delay_s)
    result = train(samples, cfg, m.n_voxels, ae=ae, steps=cfg.sweep_steps, with_stats=False)
    model = result.state.model
    model.eval()
    report = evaluate_hit_rate(model, result.test, cfg, split="test", mode="group")
    stats = relational_stats(model, result.test, cfg.batch_size, split="test")
    log.info("[sweep] delay_s=%s samples=%s skipped=%s hit_rate=%.4f chance=%.4f r_af=%.4f",
             delay_s, len(samples), skipped, report.rate, report.chance, stats.r_af)
    return {"delay_s": float(delay_s), "hit_rate": report.rate, "chance": report.chance,
            "positive_mean": stats.r_af, "samples": len(samples)}


def mark_best(rows: List[SweepRow]) -> List[SweepRow]:
    if rows:
        best = int(np.argmax([r.hit_rate for r in rows]))
        for i, r in enumerate(rows):
            r.best = i == best
    return rows


def delay_sweep(
    m: DatasetManifest,
    delays: Sequence[float],
    cfg: RunConfig,
    ae: Optional[Autoencoder] = None,
    track_path: Optional[Path] = None,
) -> List[SweepRow]:
    """
    Trains a fresh model per assumed delay (cfg.sweep_steps each) and scores
    group hit rate on its test split. With `track_path`, delays already marked
    Done for the same dataset/config are read back instead of retrained.
    """
    if not delays:
        raise ValidationError("delay sweep needs at least one delay")
    frames = FrameStore(m, dtype=cfg.dtype)
    done: Dict[str, Dict] = {}
    if track_path is not None:
        fingerprint = {"dataset": str(m.root), "config": cfg.model_dump(mode="json")}
        init_tracking(track_path, delays, fingerprint)
        done = done_results(track_path)
    todo = [d for d in delays if delay_key(d) not in done]
    log.info("[sweep] delays=%s cached=%s todo=%s", list(delays), len(delays) - len(todo), todo)

    def run(d: float) -> Dict[str, float]:
        out = _sweep_one(m, cfg, d, ae, frames)
        if track_path is not None:
            mark_status(track_path, d, DONE, result=out)
        return out

    failures = []
    for d, res, err in run_each(run, todo, max(1, min(len(todo), worker_count(cfg)))):
        if err:
            failures.append(f"{d:g}s: {err}")
            if track_path is not None:
                mark_status(track_path, d, FAILED, error=err)
        else:
            done[delay_key(d)] = res
    if failures:
        raise AvanError("delay sweep failed for " + "; ".join(failures))
    rows = [SweepRow(**done[delay_key(d)]) for d in delays]
    return mark_best(rows)


# ---------- brain networks ----------

@dataclass
class BrainNetwork:
    index: int
    map: np.ndarray
    zmap: np.ndarray
    support: np.ndarray
    flagged: bool = False
    activation: float = 0.0


def extract_networks(weights: np.ndarray, threshold_z: float = 3.0,
                     fmri: Optional[np.ndarray] = None) -> List[BrainNetwork]:
    """
    One network per encoder row. Rows are z-scored across voxels; the support
    is every voxel with |z| >= threshold_z. With `fmri` (T, V) the networks are
    ranked by the mean absolute value of their code over those volumes,
    otherwise they keep row order.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2:
        raise ShapeError("extract_networks", ("D", "V"), w.shape)
    activation = np.zeros(w.shape[0])
    if fmri is not None:
        data = np.asarray(fmri, dtype=np.float64)
        if data.ndim != 2 or data.shape[1] != w.shape[1]:
            raise ShapeError("extract_networks.fmri", (None, w.shape[1]), data.shape)
        activation = np.abs(data @ w.T).mean(axis=0)

    nets: List[BrainNetwork] = []
    for i, row in enumerate(w):
        flat = row.std() == 0 or not np.all(np.isfinite(row))
        if flat:
            z = np.zeros_like(row)
            support = np.zeros(0, dtype=np.int64)
        else:
            z = zscore(row)
            support = np.flatnonzero(np.abs(z) >= threshold_z)
        nets.append(BrainNetwork(index=i, map=row.copy(), zmap=z, support=support,
                                 flagged=bool(flat), activation=float(activation[i])))
    flagged = sum(n.flagged for n in nets)
    if flagged:
        log.warning("[networks] flat_rows=%s of %s", flagged, len(nets))
    order = np.argsort(-activation, kind="stable")
    return [nets[i] for i in order]



@dataclass
class NetworkMatch:
    corr: np.ndarray                 # (networks, templates)
    best: List[int]                  # per template: index into the network list
    best_corr: List[float]
    flagged: List[Tuple[int, int]] = field(default_factory=list)

    def recovered(self, min_abs_corr: float = 0.6) -> int:
        return int(sum(abs(c) >= min_abs_corr for c in self.best_corr))


def match_networks(networks: Sequence[BrainNetwork], templates: Sequence[np.ndarray]) -> NetworkMatch:
    """Pearson correlation of every (network, template) pair; zero variance gives 0 and a flag."""
    a = np.stack([n.map for n in networks]).astype(np.float64) if networks else np.zeros((0, 0))
    b = np.stack([np.asarray(t, dtype=np.float64) for t in templates]) if len(templates) else np.zeros((0, 0))
    if a.size and b.size and a.shape[1] != b.shape[1]:
        raise ShapeError("match_networks", (None, a.shape[1]), b.shape)
    a = a - a.mean(axis=1, keepdims=True)
    b = b - b.mean(axis=1, keepdims=True)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    denom = np.outer(na, nb)
    corr = np.zeros((a.shape[0], b.shape[0]))
    ok = denom > 0
    corr[ok] = (a @ b.T)[ok] / denom[ok]
    flagged = [(int(i), int(j)) for i, j in zip(*np.nonzero(~ok))]
    best: List[int] = []
    best_corr: List[float] = []
    for j in range(corr.shape[1]):
        i = int(np.argmax(np.abs(corr[:, j]))) if corr.shape[0] else -1
        best.append(i)
        best_corr.append(float(corr[i, j]) if i >= 0 else 0.0)
    return NetworkMatch(corr=corr, best=best, best_corr=best_corr, flagged=flagged)


def fmri_weights(model: AvanModel) -> np.ndarray:
    return np.asarray(model.fmri.w.data, dtype=np.float64)



# ---------- object of interest ----------

@dataclass
class ObjectInterest:
    per_object: List[float]
    moving: float
    stationary: float
    background: float
    frames: int


def object_mass(masks: np.ndarray, object_masks: np.ndarray) -> Tuple[np.ndarray, float]:
    """Attention mass on each object and in total. masks (N, H, W); object_masks (N, K, H, W) bool."""
    att = np.asarray(masks, dtype=np.float64)
    objs = np.asarray(object_masks, dtype=bool)
    if att.ndim != 3 or objs.ndim != 4 or objs.shape[0] != att.shape[0] or objs.shape[2:] != att.shape[1:]:
        raise ShapeError("object_interest", ("N", "K", "H", "W"), objs.shape, f"masks {att.shape}")
    return np.einsum("nhw,nkhw->k", att, objs.astype(np.float64)), float(att.sum())


def _interest(per_mass: np.ndarray, total: float, moving: Sequence[bool], frames: int) -> ObjectInterest:
    if len(moving) != per_mass.shape[0]:
        raise ShapeError("object_interest.moving", (per_mass.shape[0],), (len(moving),))
    if total <= 0:
        return ObjectInterest([0.0] * per_mass.shape[0], 0.0, 0.0, 0.0, frames)
    per = per_mass / total
    flags = np.asarray(moving, dtype=bool)
    return ObjectInterest(
        per_object=per.tolist(),
        moving=float(per[flags].sum()),
        stationary=float(per[~flags].sum()),
        background=float(max(0.0, 1.0 - per.sum())),
        frames=frames,
    )


def object_interest(masks: np.ndarray, object_masks: np.ndarray, moving: Sequence[bool]) -> ObjectInterest:
    """
    Share of attention mass that lands on each object, pooled over frames.
    Object masks are disjoint per frame, so the shares plus background sum to 1.
    """
    per, total = object_mass(masks, object_masks)
    return _interest(per, total, moving, int(np.asarray(masks).shape[0]))


def sample_object_masks(world: WorldSpec, samples: Sequence[PairedSample]) -> np.ndarray:
    """Ground-truth object masks cut to each sample's crop, (N, K, c, c)."""
    out = []
    for s in samples:
        _, masks = render_index(world, s.frame_index)
        x0, y0 = s.crop_origin
        out.append(masks[:, y0:y0 + s.crop_size, x0:x0 + s.crop_size])
    return np.stack(out) if out else np.zeros((0, len(world.objects), 0, 0), dtype=bool)


def evaluate_object_interest(model: AvanModel, samples: Sequence[PairedSample], world: WorldSpec,
                             batch_size: int = 16) -> ObjectInterest:
    """Group attention masks against the rendered object masks, batch by batch."""
    per = np.zeros(len(world.objects))
    total = 0.0
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        masks = group_masks(model, np.stack([s.image for s in chunk]), batch_size)
        p, t = object_mass(masks, sample_object_masks(world, chunk))
        per += p
        total += t
    return _interest(per, total, [o.moving for o in world.objects], len(samples))
