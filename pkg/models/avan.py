# models/avan.py
from __future__ import annotations

from typing import Dict, Optional

import numpy as np

from core import ops
from core.base import Module
from core.tensor import Graph, Tensor, resolve_dtype
from models.attention import MaskNet, segment, AlphaGrid
from models.encoders import FmriEncoder, ImageEncoder
from models.relational import ReconstructionNet, RelationalBatchInputs, RelationalNet, total_loss
from services.schemas import RunConfig


class AvanModel(Module):
    """The five trained networks under stable name prefixes (mask., image., fmri., rel., rec.)."""

    def __init__(self, cfg: RunConfig, n_voxels: int, rng: np.random.Generator, dtype=None):
        dtype = resolve_dtype(dtype or cfg.dtype)
        super().__init__(dtype)
        self.n_voxels = int(n_voxels)
        self.code_dim = cfg.code_dim
        self.crop_size = cfg.crop_size
        self.original_code = cfg.original_code
        m = cfg.bn_momentum
        self.mask = self.add_child("mask", MaskNet(cfg.widths, rng, m, dtype))
        self.image = self.add_child("image", ImageEncoder(cfg.widths, cfg.code_dim, rng, m, dtype))
        self.fmri = self.add_child("fmri", FmriEncoder(n_voxels, cfg.code_dim, rng, dtype))
        self.rel = self.add_child("rel", RelationalNet(cfg.code_dim, cfg.hidden, rng, m, cfg.zero_head, dtype))
        self.rec = self.add_child("rec", ReconstructionNet(cfg.code_dim, n_voxels, rng, m, dtype))


def build_model(cfg: RunConfig, n_voxels: int, seed: Optional[int] = None, dtype=None) -> AvanModel:
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    return AvanModel(cfg, n_voxels, rng, dtype=dtype)


def batch_codes(model: AvanModel, images: Tensor, fmri: Tensor) -> tuple[RelationalBatchInputs, AlphaGrid]:
    """
    Segments the images and encodes attended, neglected and blank (plus the
    original when configured) in one image-encoder pass.
    """
    n = images.shape[0]
    grid = AlphaGrid(model.mask(images))
    pair = segment(images, grid)
    blank = Tensor(np.zeros(images.shape, dtype=images.dtype))
    parts = [pair.attended, pair.neglected, blank]
    if model.original_code == "encode":
        parts.append(images)
    codes = model.image(ops.concat(parts, axis=0, name="encoder.batch"))

    def take(i: int, label: str) -> Tensor:
        return ops.slice_axis(codes, i * n, (i + 1) * n, axis=0, name=label)

    batch = RelationalBatchInputs(
        v_a=take(0, "v_a"),
        v_n=take(1, "v_n"),
        v_blank=take(2, "v_blank"),
        v_orig=take(3, "v_orig") if model.original_code == "encode" else None,
        v_f=model.fmri(fmri),
        s=fmri,
    )
    return batch, grid


def training_graph(model: AvanModel, margin: float, l1_coeff: float) -> Graph:
    """Graph over inputs `images` (N, 3, H, W) and `fmri` (N, V); output `objective` is optimized."""

    def build(inp: Dict[str, Tensor]) -> Dict[str, Tensor]:
        batch, grid = batch_codes(model, inp["images"], inp["fmri"])
        out = total_loss(batch, model.rel, model.rec, model.fmri.w, margin=margin, l1_coeff=l1_coeff)
        out["alpha"] = grid.alpha
        return out

    return Graph(build, model.named_parameters(), input_names=("images", "fmri"), name="avan")
