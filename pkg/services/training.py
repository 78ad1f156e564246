# services/training.py
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import psutil

from core.errors import CheckpointError, DatasetError, NonFiniteError
from core.optim import AdamState, adam_step
from core.tensor import Graph, resolve_dtype
from models.avan import AvanModel, build_model, training_graph
from models.encoders import Autoencoder, init_from_autoencoder, pretrain_autoencoder
from services.alignment import PairedSample, split_samples
from services.checkpoint import Checkpoint, check_dims, pack_state
from services.dataset import load_fmri, stack_batch
from services.schemas import DatasetManifest, RunConfig
from services.worker import prefetch

log = logging.getLogger("avan.train")

LOG_COLUMNS = ["step", "L_rel", "L_trip", "L1", "r_af_mean", "r_nf_mean", "r_anf_mean", "r_bf_mean"]


@dataclass
class TrainState:
    model: AvanModel
    adam: AdamState
    rng: np.random.Generator
    graph: Graph
    step: int = 0
    history: List[Dict[str, float]] = field(default_factory=list)


def _rss_mb() -> float:
    return psutil.Process().memory_info().rss / (1024 * 1024)


def new_state(cfg: RunConfig, n_voxels: int, ae: Optional[Autoencoder] = None, dtype=None) -> TrainState:
    model = build_model(cfg, n_voxels, dtype=dtype)
    if ae is not None:
        check_dims("train", {"code_dim": cfg.code_dim, "n_voxels": n_voxels},
                   {"code_dim": ae.code_dim, "n_voxels": ae.n_voxels})
        init_from_autoencoder(ae, model.fmri)
    adam = AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.adam_eps)
    graph = training_graph(model, margin=cfg.margin, l1_coeff=cfg.l1_coeff)
    model.train()
    return TrainState(model=model, adam=adam, rng=np.random.default_rng(cfg.seed), graph=graph)


def train_step(state: TrainState, images: np.ndarray, fmri: np.ndarray) -> Dict[str, float]:
    """
    One joint Adam step over all five networks. Metrics describe the batch
    before the update; `loss` excludes the L1 penalty that `objective` adds.
    """
    state.model.train()
    try:
        out = state.graph.evaluate({"images": images, "fmri": fmri})
        grads = state.graph.gradients("objective")
        adam_step(state.graph.params, grads, state.adam)
    except NonFiniteError as e:
        e.diagnostics.setdefault("step", state.step + 1)
        log.error("[train-step] aborted step=%s %s", state.step + 1, e)
        raise
    state.step += 1
    metrics = {
        "step": state.step,
        "L_rel": float(out["L_rel"].data),
        "L_trip": float(out["L_trip"].data),
        "L1": float(out["L1"].data),
        "loss": float(out["loss"].data),
        "r_af_mean": float(out["r_af"].data.mean()),
        "r_nf_mean": float(out["r_nf"].data.mean()),
        "r_anf_mean": float(out["r_anf"].data.mean()),
        "r_bf_mean": float(out["r_bf"].data.mean()),
    }
    state.history.append(metrics)
    return metrics


def batch_plan(rng: np.random.Generator, n: int, batch_size: int, steps: int) -> List[np.ndarray]:
    """Sample indices for every step, drawn up front so prefetching cannot change the stream."""
    size = min(batch_size, n)
    return [np.sort(rng.choice(n, size=size, replace=False)) for _ in range(steps)]


class TrainLog:
    """Append-only CSV of per-step loss terms."""

    def __init__(self, path: Optional[Path]):
        self.path = Path(path) if path else None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if not self.path.exists() or self.path.stat().st_size == 0:
                with self.path.open("w", newline="", encoding="utf-8") as f:
                    csv.DictWriter(f, fieldnames=LOG_COLUMNS).writeheader()

    def append(self, rows: Sequence[Dict[str, float]]) -> None:
        if self.path is None or not rows:
            return
        with self.path.open("a", newline="", encoding="utf-8") as f:
            w = csv.DictWriter(f, fieldnames=LOG_COLUMNS, extrasaction="ignore")
            for r in rows:
                w.writerow(r)


def run_steps(
    state: TrainState,
    samples: Sequence[PairedSample],
    cfg: RunConfig,
    steps: int,
    train_log: Optional[TrainLog] = None,
) -> List[Dict[str, float]]:
    if not samples:
        raise DatasetError("training split is empty")
    dtype = state.model.dtype
    plan = batch_plan(state.rng, len(samples), cfg.batch_size, steps)

    def make(i: int) -> Tuple[np.ndarray, np.ndarray]:
        return stack_batch([samples[j] for j in plan[i]], dtype)

    batches: Iterator = prefetch(make, steps) if cfg.prefetch else (make(i) for i in range(steps))
    pending: List[Dict[str, float]] = []
    t0 = time.perf_counter()
    for images, fmri in batches:
        m = train_step(state, images, fmri)
        pending.append(m)
        if state.step % cfg.log_every == 0 or state.step == 1:
            log.info("[train-step] step=%s loss=%.5f l_rel=%.5f l_trip=%.5f l1=%.3g r_af=%.3f r_nf=%.3f rss_mb=%.0f",
                     state.step, m["loss"], m["L_rel"], m["L_trip"], m["L1"],
                     m["r_af_mean"], m["r_nf_mean"], _rss_mb())
            if train_log:
                train_log.append(pending)
            pending = []
    if train_log:
        train_log.append(pending)
    log.info("[train] steps=%s elapsed_s=%.1f", steps, time.perf_counter() - t0)
    return state.history


def model_checkpoint(state: TrainState, cfg: RunConfig, n_voxels: int, extra: Optional[Dict] = None) -> Checkpoint:
    meta = {"n_voxels": n_voxels}
    if extra:
        meta.update(extra)
    return pack_state("avan", state.model.state_dict(), cfg.model_dump(), step=state.step,
                      rng=state.rng, adam=state.adam, extra=meta)


@dataclass
class TrainResult:
    state: TrainState
    checkpoint: Checkpoint
    train: List[PairedSample]
    test: List[PairedSample]
    stats: List = field(default_factory=list)


def train(
    samples: Sequence[PairedSample],
    cfg: RunConfig,
    n_voxels: int,
    ae: Optional[Autoencoder] = None,
    log_path: Optional[Path] = None,
    steps: Optional[int] = None,
    with_stats: bool = True,
) -> TrainResult:
    """
    Contiguous 70/30 split, `steps` joint updates (cfg.steps by default), then
    relational statistics on both splits.
    """
    train_set, test_set = split_samples(samples, cfg.train_fraction)
    if not train_set or not test_set:
        raise DatasetError(f"empty split: train={len(train_set)} test={len(test_set)} from {len(samples)} samples")
    log.info("[train] samples=%s train=%s test=%s steps=%s batch=%s lr=%s",
             len(samples), len(train_set), len(test_set), cfg.steps if steps is None else steps,
             cfg.batch_size, cfg.lr)
    state = new_state(cfg, n_voxels, ae=ae, dtype=resolve_dtype(cfg.dtype))
    run_steps(state, train_set, cfg, cfg.steps if steps is None else steps, TrainLog(log_path))

    stats = []
    if with_stats:
        from services.evaluation import relational_stats, stats_table

        stats = stats_table(
            relational_stats(state.model, train_set, cfg.batch_size, split="train"),
            relational_stats(state.model, test_set, cfg.batch_size, split="test"),
        )
        for row in stats:
            log.info("[train-stats] row=%s positive=%.4f negative=%.4f regularization=%.4f",
                     row.row, row.positive, row.negative, row.regularization)
    ckpt = model_checkpoint(state, cfg, n_voxels)
    return TrainResult(state=state, checkpoint=ckpt, train=train_set, test=test_set, stats=stats)


# ---------- autoencoder ----------

def dataset_fmri(m: DatasetManifest) -> np.ndarray:
    """All subjects' volumes stacked (T * subjects, V)."""
    return np.concatenate([load_fmri(m, sid).volumes for sid in m.subject_ids], axis=0)


def pretrain(m: DatasetManifest, cfg: RunConfig) -> Autoencoder:
    data = dataset_fmri(m)
    log.info("[pretrain] volumes=%s voxels=%s code_dim=%s epochs=%s", data.shape[0], data.shape[1],
             cfg.code_dim, cfg.ae_epochs)
    return pretrain_autoencoder(data, cfg.ae_epochs, cfg.code_dim, l1_coeff=cfg.l1_coeff, lr=cfg.ae_lr,
                                batch_size=cfg.ae_batch, seed=cfg.seed, dtype=np.float64)


def autoencoder_checkpoint(ae: Autoencoder, cfg: RunConfig) -> Checkpoint:
    return pack_state("autoencoder", ae.state_dict(), cfg.model_dump(),
                      step=len(ae.history),
                      extra={"n_voxels": ae.n_voxels, "code_dim": ae.code_dim, "history": ae.history})


def autoencoder_from_checkpoint(ckpt: Checkpoint) -> Autoencoder:
    if ckpt.kind != "autoencoder":
        raise CheckpointError(f"expected an autoencoder checkpoint, got kind={ckpt.kind}")
    v, d = int(ckpt.header["n_voxels"]), int(ckpt.header["code_dim"])
    ae = Autoencoder(v, d, np.random.default_rng(0), dtype=ckpt.tensors["w_e"].dtype)
    ae.load_state_dict(ckpt.tensors)
    ae.history = list(ckpt.header.get("history") or [])
    return ae
