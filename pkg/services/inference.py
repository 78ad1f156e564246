# services/inference.py
"""
Test-time decoding. Group attention uses the mask network alone; individual
attention scores every 32x32 image block against one fMRI vector with the
relational network and paints the image with the resulting map.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import uniform_filter

from core import ops
from core.errors import CheckpointError, ValidationError
from core.tensor import Tensor
from models.attention import AlphaGrid, SegmentedPair, as_image_batch, mask_forward, segment
from models.avan import AvanModel, batch_codes, build_model
from models.encoders import ImageEncoder, encode_fmri
from models.layers import DOWNSAMPLE, check_divisible
from models.relational import relation_scores
from services.checkpoint import Checkpoint, load_checkpoint
from services.schemas import RunConfig

log = logging.getLogger("avan.infer")


@dataclass
class RelationalMap:
    grid: np.ndarray  # (F_h, F_w), values in (-1, 1)

    @property
    def shape(self) -> Tuple[int, int]:
        return tuple(self.grid.shape)

    def upsampled(self, height: int, width: int) -> np.ndarray:
        ah = ops.bilinear_matrix(self.grid.shape[0], height)
        aw = ops.bilinear_matrix(self.grid.shape[1], width)
        return ah @ self.grid @ aw.T


# ---------- model loading ----------

def model_from_checkpoint(ckpt: Checkpoint, dtype=None) -> Tuple[AvanModel, RunConfig]:
    if ckpt.kind != "avan":
        raise CheckpointError(f"expected a trained model checkpoint, got kind={ckpt.kind}")
    cfg = RunConfig(**ckpt.config)
    n_voxels = int(ckpt.header.get("n_voxels") or 0)
    if n_voxels <= 0:
        raise CheckpointError("checkpoint header lacks n_voxels")
    model = build_model(cfg, n_voxels, dtype=dtype or cfg.dtype)
    model.load_state_dict(ckpt.model_tensors())
    model.eval()
    return model, cfg


def load_model(path: Path | str, dtype=None) -> Tuple[AvanModel, RunConfig]:
    return model_from_checkpoint(load_checkpoint(path), dtype=dtype)


def _require(model: Optional[AvanModel]) -> AvanModel:
    if model is None:
        raise CheckpointError("no trained model loaded")
    return model


# ---------- group attention ----------

def group_attention(model: AvanModel, image) -> Tuple[AlphaGrid, SegmentedPair]:
    model = _require(model)
    with model.mask.evaluating():
        grid = mask_forward(image, model.mask)
    return grid, segment(image, grid)


def group_masks(model: AvanModel, images: np.ndarray, batch_size: int = 16) -> np.ndarray:
    """(N, 3, H, W) -> upsampled masks (N, H, W)."""
    model = _require(model)
    out = []
    with model.mask.evaluating():
        for i in range(0, len(images), batch_size):
            x = as_image_batch(images[i:i + batch_size], dtype=model.dtype)
            alpha = model.mask(x)
            out.append(ops.upsample_bilinear(alpha, x.shape[2], x.shape[3]).data[:, 0])
    return np.concatenate(out, axis=0) if out else np.zeros((0,) + tuple(images.shape[2:]))


# ---------- individual attention ----------

def feature_grid(encoder: ImageEncoder, image) -> np.ndarray:
    """
    Pre-pooling backbone features, (F_h, F_w, C_f), with F = floor(size / 32);
    trailing rows/columns that do not fill a 32-pixel block are dropped.
    """
    x = as_image_batch(image, dtype=encoder.dtype)
    h = (x.shape[2] // DOWNSAMPLE) * DOWNSAMPLE
    w = (x.shape[3] // DOWNSAMPLE) * DOWNSAMPLE
    if h == 0 or w == 0:
        raise ValidationError(f"image {x.shape[2]}x{x.shape[3]} smaller than one {DOWNSAMPLE}px block")
    if (h, w) != x.shape[2:]:
        x = Tensor(x.data[:, :, :h, :w])
    with encoder.evaluating():
        feats = encoder.features(x).data[0]
    return np.ascontiguousarray(feats.transpose(1, 2, 0))


def window_average(features: np.ndarray) -> np.ndarray:
    """
    3x3 neighbourhood mean per cell. Border windows are zero padded and
    divided by the number of in-bounds cells, so a constant grid stays constant.
    """
    size = (3, 3, 1)
    summed = uniform_filter(features, size=size, mode="constant", cval=0.0)
    counts = uniform_filter(np.ones(features.shape[:2] + (1,)), size=size, mode="constant", cval=0.0)
    return summed / counts


def relational_map(model: AvanModel, image, fmri, features: Optional[np.ndarray] = None) -> RelationalMap:
    """One relational score per feature-grid cell against the given fMRI vector."""
    model = _require(model)
    x = as_image_batch(image, dtype=model.dtype)
    check_divisible("relational_map", x.shape[2], x.shape[3])
    with model.evaluating():
        if features is None:
            features = feature_grid(model.image, x)
        fh, fw, cf = features.shape
        pooled = window_average(features).reshape(fh * fw, cf)
        codes = model.image.head(Tensor(pooled.astype(model.dtype, copy=False))).data
        v_f = encode_fmri(np.asarray(fmri, dtype=model.dtype), model.fmri).data
        pairs = np.concatenate([codes, np.repeat(v_f, fh * fw, axis=0)], axis=1)
        scores = model.rel(Tensor(pairs)).data.reshape(fh, fw)
    return RelationalMap(grid=scores)


def rectify(grid: np.ndarray, mode: str = "clamp") -> np.ndarray:
    """clamp: negatives to 0. minmax: clamp, then rescale to [0, 1] (constant maps stay clamped)."""
    r = np.maximum(grid, 0.0)
    if mode == "clamp":
        return r
    if mode != "minmax":
        raise ValidationError(f"unknown rescale mode {mode!r} (clamp | minmax)")
    lo, hi = float(r.min()), float(r.max())
    return (r - lo) / (hi - lo) if hi > lo else r


def individual_attention(image, rmap: RelationalMap, mode: str = "clamp") -> np.ndarray:
    """image (3, H, W) times the upsampled, rectified relational map."""
    img = np.asarray(image)
    if img.ndim != 3:
        raise ValidationError(f"expected a (C, H, W) image, got shape {img.shape}")
    weight = rectify(rmap.upsampled(img.shape[1], img.shape[2]), mode)
    return img * weight[None].astype(img.dtype, copy=False)


def individual_mask(image, rmap: RelationalMap) -> np.ndarray:
    """Hit-test surface for individual attention: rectified, upsampled and min-max normalised."""
    img = np.asarray(image)
    return rectify(rmap.upsampled(img.shape[-2], img.shape[-1]), "minmax")


# ---------- batched scoring ----------

def score_batch(model: AvanModel, images: np.ndarray, fmri: np.ndarray) -> Dict[str, np.ndarray]:
    """Eval-mode relational outputs and reconstruction distances for one batch."""
    model = _require(model)
    x = as_image_batch(images, dtype=model.dtype)
    s = Tensor(np.asarray(fmri, dtype=model.dtype))
    with model.evaluating():
        batch, _ = batch_codes(model, x, s)
        scores = relation_scores(batch, model.rel)
        recon = model.rec(ops.concat([batch.v_a, batch.v_n], axis=0)).data
    n = batch.batch_size
    d_a = np.linalg.norm(recon[:n] - s.data, axis=1)
    d_n = np.linalg.norm(recon[n:] - s.data, axis=1)
    out = {k: v.data.reshape(-1) for k, v in scores.items()}
    out.update({"d_a": d_a, "d_n": d_n})
    return out


def score_samples(model: AvanModel, samples: Sequence, batch_size: int = 16) -> Dict[str, np.ndarray]:
    parts: List[Dict[str, np.ndarray]] = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        images = np.stack([s.image for s in chunk])
        fmri = np.stack([s.fmri for s in chunk])
        parts.append(score_batch(model, images, fmri))
    if not parts:
        return {}
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
