# models/relational.py
"""
Relational module and the training objective.

f_rel scores a (image code ++ fMRI code) pair in (-1, 1); f_rec maps an image
code back to voxel space so that the attended code reconstructs the measured
activity better than the neglected one (triplet hinge).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from core import ops
from core.base import Module
from core.errors import NonFiniteError, ShapeError, ValidationError
from core.tensor import Tensor, as_tensor
from models.layers import BatchNorm, Dense

# targets for (attended, neglected, original, blank)
RELATION_TARGETS = (1.0, -1.0, 0.0, 0.0)
RELATION_KEYS = ("r_af", "r_nf", "r_anf", "r_bf")


class RelationalNet(Module):
    """2D -> hidden (dense, BN, ReLU)* -> 1 -> tanh."""

    def __init__(self, code_dim: int, hidden: Sequence[int], rng: np.random.Generator,
                 momentum: float = 0.9, zero_head: bool = False, dtype=np.float64):
        super().__init__(dtype)
        self.in_dim = 2 * int(code_dim)
        self.layers = []
        width = self.in_dim
        for i, h in enumerate(hidden):
            dense = self.add_child(f"dense{i + 1}", Dense(width, h, rng, dtype=dtype, label=f"rel.dense{i + 1}"))
            bn = self.add_child(f"bn{i + 1}", BatchNorm(h, momentum, dtype, f"rel.bn{i + 1}"))
            self.layers.append((dense, bn))
            width = h
        self.head = self.add_child("head", Dense(width, 1, rng, zero=zero_head, dtype=dtype, label="rel.head"))

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError("relate", (None, self.in_dim), x.shape)
        h = x
        for i, (dense, bn) in enumerate(self.layers):
            h = ops.relu(bn(dense(h)), name=f"rel.relu{i + 1}")
        return ops.tanh(self.head(h), name="rel.tanh")


class ReconstructionNet(Module):
    """Dense D -> V followed by batch-norm."""

    def __init__(self, code_dim: int, n_voxels: int, rng: np.random.Generator,
                 momentum: float = 0.9, dtype=np.float64):
        super().__init__(dtype)
        self.n_voxels = int(n_voxels)
        self.dense = self.add_child("dense", Dense(code_dim, n_voxels, rng, dtype=dtype, label="rec.dense"))
        self.bn = self.add_child("bn", BatchNorm(n_voxels, momentum, dtype, "rec.bn"))

    def __call__(self, v: Tensor) -> Tensor:
        return self.bn(self.dense(v))


@dataclass
class RelationalBatchInputs:
    """Codes for one batch, all (N, D) except s (N, V)."""

    v_a: Tensor
    v_n: Tensor
    v_f: Tensor
    v_blank: Tensor
    s: Tensor
    v_orig: Optional[Tensor] = None  # set when the original image is encoded directly

    @property
    def batch_size(self) -> int:
        return self.v_a.shape[0]

    @property
    def v_af(self) -> Tensor:
        return ops.concat([self.v_a, self.v_f], axis=1, name="v_af")

    @property
    def v_nf(self) -> Tensor:
        return ops.concat([self.v_n, self.v_f], axis=1, name="v_nf")

    @property
    def v_anf(self) -> Tensor:
        orig = self.v_orig if self.v_orig is not None else ops.add(self.v_a, self.v_n, name="v_a_plus_v_n")
        return ops.concat([orig, self.v_f], axis=1, name="v_anf")

    @property
    def v_bf(self) -> Tensor:
        return ops.concat([self.v_blank, self.v_f], axis=1, name="v_bf")


def relate(x, net: RelationalNet) -> Tensor:
    t = as_tensor(x, dtype=net.dtype)
    if t.data.ndim == 1:
        if t.shape[0] != net.in_dim:
            raise ShapeError("relate", (net.in_dim,), t.shape)
        t = Tensor(t.data[None], requires_grad=False)
    return net(t)


def relational_loss(r_af: float, r_nf: float, r_anf: float, r_bf: float) -> float:
    return (1.0 - r_af) ** 2 + (-1.0 - r_nf) ** 2 + r_anf ** 2 + r_bf ** 2


def triplet_hinge(d_a: float, d_n: float, margin: float) -> float:
    if margin < 0:
        raise ValidationError(f"margin must be >= 0, got {margin}")
    return max(d_a - d_n + margin, 0.0)


def relational_terms(scores: Dict[str, Tensor]) -> Tensor:
    """Per-sample squared distance of the four relational outputs to their targets, shape (N,)."""
    parts = []
    for key, target in zip(RELATION_KEYS, RELATION_TARGETS):
        r = scores[key]
        parts.append(ops.squared_error(r, np.full(r.shape, target, dtype=r.dtype), name=f"lrel.{key}"))
    out = parts[0]
    for p in parts[1:]:
        out = ops.add(out, p, name="lrel.sum")
    return out


def triplet_loss(s, v_a, v_n, rec: ReconstructionNet, margin: float) -> Tensor:
    """
    max(d(s, f_rec(v_a)) - d(s, f_rec(v_n)) + margin, 0) per sample. v_a and v_n
    go through f_rec as one batch so batch-norm sees both.
    """
    if margin < 0:
        raise ValidationError(f"margin must be >= 0, got {margin}")
    s, v_a, v_n = (as_tensor(t, dtype=rec.dtype) for t in (s, v_a, v_n))
    n = v_a.shape[0]
    recon = rec(ops.concat([v_a, v_n], axis=0, name="rec.batch"))
    if recon.shape[1] != s.shape[1]:
        raise ShapeError("triplet_loss", (None, recon.shape[1]), s.shape)
    d_a = ops.euclidean(ops.slice_axis(recon, 0, n, axis=0, name="rec.a"), s, name="d_a")
    d_n = ops.euclidean(ops.slice_axis(recon, n, 2 * n, axis=0, name="rec.n"), s, name="d_n")
    gap = ops.add(d_a, ops.scale(d_n, -1.0), name="d_gap")
    return ops.maximum0(ops.scale_shift(gap, 1.0, margin), name="triplet.hinge")


def relation_scores(batch: RelationalBatchInputs, net: RelationalNet) -> Dict[str, Tensor]:
    """All four relational outputs from one f_rel pass over the stacked inputs."""
    n = batch.batch_size
    stacked = ops.concat([batch.v_af, batch.v_nf, batch.v_anf, batch.v_bf], axis=0, name="rel.batch")
    out = net(stacked)
    return {
        key: ops.slice_axis(out, i * n, (i + 1) * n, axis=0, name=f"rel.{key}")
        for i, key in enumerate(RELATION_KEYS)
    }


def _finite(name: str, t: Tensor) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NonFiniteError(name, where="term", diagnostics={"shape": t.shape})
    return t


def total_loss(
    batch: RelationalBatchInputs,
    rel: RelationalNet,
    rec: ReconstructionNet,
    fmri_weights: Tensor,
    margin: float = 0.1,
    l1_coeff: float = 5e-6,
) -> Dict[str, Tensor]:
    """
    Returns named terms. `objective` (what the optimizer sees) adds the L1
    penalty on the fMRI encoder weights; `loss` is L_rel + L_trip only.
    """
    if l1_coeff < 0:
        raise ValidationError(f"l1 coefficient must be >= 0, got {l1_coeff}")
    scores = relation_scores(batch, rel)
    l_rel = _finite("L_rel", ops.mean(relational_terms(scores), name="L_rel"))
    l_trip = _finite("L_trip", ops.mean(triplet_loss(batch.s, batch.v_a, batch.v_n, rec, margin), name="L_trip"))
    l1 = _finite("L1", ops.scale(ops.l1_norm(fmri_weights), l1_coeff, name="L1"))
    loss = ops.add(l_rel, l_trip, name="loss")
    objective = ops.add(loss, l1, name="objective")
    return {"objective": objective, "loss": loss, "L_rel": l_rel, "L_trip": l_trip, "L1": l1, **scores}
