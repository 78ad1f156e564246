# models/encoders.py
from __future__ import annotations

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np

from core import ops
from core.base import Module
from core.errors import NonFiniteError, ShapeError, ValidationError
from core.optim import AdamState, adam_soft_threshold, adam_step
from core.tensor import Graph, Tensor, as_tensor
from models.attention import as_image_batch
from models.layers import Backbone, Dense, check_divisible, uniform_init

log = logging.getLogger("avan.encoders")


class ImageEncoder(Module):
    """Residual backbone -> global average pool -> dense(D) -> tanh."""

    def __init__(self, widths: Sequence[int], code_dim: int, rng: np.random.Generator,
                 momentum: float = 0.9, dtype=np.float64):
        super().__init__(dtype)
        self.code_dim = int(code_dim)
        self.backbone = self.add_child("backbone", Backbone(widths, rng, 3, momentum, dtype, "image.backbone"))
        self.dense = self.add_child("dense", Dense(self.backbone.out_channels, code_dim, rng,
                                                   dtype=dtype, label="image.dense"))

    def features(self, x: Tensor) -> Tensor:
        return self.backbone(x)

    def head(self, pooled: Tensor) -> Tensor:
        return ops.tanh(self.dense(pooled), name="image.tanh")

    def __call__(self, x: Tensor) -> Tensor:
        check_divisible("encode_image", x.shape[2], x.shape[3])
        return self.head(ops.global_avg_pool(self.features(x), name="image.gap"))


class FmriEncoder(Module):
    """Linear decomposition: code = W s, W of shape (D, V), no bias."""

    def __init__(self, n_voxels: int, code_dim: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__(dtype)
        self.n_voxels = int(n_voxels)
        self.code_dim = int(code_dim)
        self.w = self.add_param("w", uniform_init(rng, (code_dim, n_voxels), n_voxels))

    def __call__(self, s: Tensor) -> Tensor:
        if s.data.ndim != 2 or s.shape[1] != self.n_voxels:
            raise ShapeError("encode_fmri", (None, self.n_voxels), s.shape)
        return ops.dense(s, self.w, None, name="fmri.encode")


class Autoencoder(Module):
    """Linear autoencoder used to initialize the fMRI encoder."""

    def __init__(self, n_voxels: int, code_dim: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__(dtype)
        self.n_voxels = int(n_voxels)
        self.code_dim = int(code_dim)
        self.w_e = self.add_param("w_e", uniform_init(rng, (code_dim, n_voxels), n_voxels))
        self.w_d = self.add_param("w_d", uniform_init(rng, (n_voxels, code_dim), code_dim))
        self.history: List[float] = []

    def encode(self, s: Tensor) -> Tensor:
        return ops.dense(s, self.w_e, None, name="ae.encode")

    def __call__(self, s: Tensor) -> Tensor:
        return ops.dense(self.encode(s), self.w_d, None, name="ae.decode")


def encode_image(image, encoder: ImageEncoder) -> Tensor:
    return encoder(as_image_batch(image, dtype=encoder.dtype))


def encode_fmri(v, encoder: FmriEncoder) -> Tensor:
    s = as_tensor(v, dtype=encoder.dtype) if not isinstance(v, Tensor) else v
    if s.data.ndim == 1:
        if s.shape[0] != encoder.n_voxels:
            raise ShapeError("encode_fmri", (encoder.n_voxels,), s.shape)
        s = Tensor(s.data[None], requires_grad=False)
    return encoder(s)


def l1_penalty(weights: FmriEncoder | Autoencoder | Tensor, coeff: float) -> Tensor:
    if coeff < 0:
        raise ValidationError(f"l1 coefficient must be >= 0, got {coeff}")
    if isinstance(weights, FmriEncoder):
        w = weights.w
    elif isinstance(weights, Autoencoder):
        w = weights.w_e
    else:
        w = weights
    return ops.scale(ops.l1_norm(w, name="l1.norm"), coeff, name="l1.penalty")


def autoencoder_graph(ae: Autoencoder, l1_coeff: float) -> Graph:
    def build(inp: Dict[str, Tensor]) -> Dict[str, Tensor]:
        x = inp["fmri"]
        recon = ae(x)
        sq = ops.squared_error(recon, x.data, name="ae.sq_err")
        mse = ops.scale(ops.mean(sq), 1.0 / ae.n_voxels, name="ae.mse")
        loss = ops.add(mse, l1_penalty(ae, l1_coeff), name="ae.loss")
        return {"loss": loss, "mse": mse, "recon": recon}

    return Graph(build, ae.named_parameters(), input_names=("fmri",), name="autoencoder")


def pretrain_autoencoder(
    fmri,
    epochs: int,
    code_dim: int,
    l1_coeff: float = 5e-6,
    lr: float = 1e-3,
    batch_size: int = 0,
    seed: int = 0,
    dtype=np.float64,
    ae: Optional[Autoencoder] = None,
) -> Autoencoder:
    """
    Minimizes MSE reconstruction + l1_coeff * ||W_e||_1: Adam on the MSE,
    then a soft-threshold of W_e in Adam's metric, so unused weights reach
    exactly zero. batch_size 0 trains full-batch (one step per epoch);
    otherwise the rows are visited in a seeded shuffle. `ae.history` holds
    the per-epoch loss including the penalty.
    """
    data = np.asarray(fmri, dtype=dtype)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValidationError("pretrain_autoencoder: empty fMRI dataset")
    if data.shape[0] < 2:
        raise ValidationError(f"pretrain_autoencoder: need >= 2 samples, got {data.shape[0]}")
    if not np.all(np.isfinite(data)):
        raise NonFiniteError("fmri", where="input")

    rng = np.random.default_rng(seed)
    t_count, n_vox = data.shape
    if ae is None:
        ae = Autoencoder(n_vox, code_dim, rng, dtype=dtype)
    elif ae.n_voxels != n_vox:
        raise ShapeError("pretrain_autoencoder", (None, ae.n_voxels), data.shape)

    graph = autoencoder_graph(ae, l1_coeff)
    state = AdamState(lr=lr)
    bs = t_count if batch_size <= 0 else min(batch_size, t_count)
    for epoch in range(1, int(epochs) + 1):
        order = np.arange(t_count) if bs == t_count else rng.permutation(t_count)
        for start in range(0, t_count, bs):
            rows = order[start:start + bs]
            graph.evaluate({"fmri": data[rows]})
            grads = graph.gradients("mse")
            adam_step(graph.params, grads, state)
            zeros = adam_soft_threshold(ae.w_e, state, "w_e", l1_coeff)
        full = float(graph.evaluate({"fmri": data})["loss"].data)
        if not np.isfinite(full):
            raise NonFiniteError("ae.loss", where="term", diagnostics={"epoch": epoch})
        ae.history.append(full)
        if epoch == 1 or epoch % 10 == 0 or epoch == epochs:
            log.info("[ae-epoch] epoch=%s loss=%.6f zero_weights=%s", epoch, full, zeros)
    return ae


def init_from_autoencoder(ae: Autoencoder, encoder: Optional[FmriEncoder] = None) -> FmriEncoder:
    """Copies W_e bit-exactly into a (new or given) fMRI encoder."""
    if encoder is None:
        encoder = FmriEncoder(ae.n_voxels, ae.code_dim, np.random.default_rng(0), dtype=ae.dtype)
    if encoder.w.shape != ae.w_e.shape:
        raise ShapeError("init_from_autoencoder", ae.w_e.shape, encoder.w.shape)
    encoder.w.data[...] = ae.w_e.data.astype(encoder.w.dtype, copy=True)
    return encoder
