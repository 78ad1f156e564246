# models/attention.py
"""
Adversarial attention module: a residual masking network maps an image to a
probability grid alpha at 1/32 resolution; alpha and 1 - alpha split every
pixel between the attention-related and the attention-neglected image.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from core import ops
from core.base import Module
from core.tensor import Tensor, as_tensor
from models.layers import Backbone, Conv2d, check_divisible


def as_image_batch(image, dtype=None) -> Tensor:
    """(C, H, W) or (N, C, H, W) array/Tensor -> (N, C, H, W) Tensor."""
    if isinstance(image, Tensor):
        return image if image.data.ndim == 4 else Tensor(image.data[None], requires_grad=False)
    arr = np.asarray(image, dtype=dtype)
    return as_tensor(arr[None] if arr.ndim == 3 else arr, dtype=dtype)


class MaskNet(Module):
    def __init__(self, widths: Sequence[int], rng: np.random.Generator, momentum: float = 0.9,
                 dtype=np.float64):
        super().__init__(dtype)
        self.backbone = self.add_child("backbone", Backbone(widths, rng, 3, momentum, dtype, "mask.backbone"))
        self.head = self.add_child("head", Conv2d(self.backbone.out_channels, 1, 1, 1, rng, dtype, "mask.head"))
        # bias starts at 0 so the first masks sit at 0.5
        self.head.b.data[...] = 0.0

    def __call__(self, image: Tensor) -> Tensor:
        check_divisible("mask_forward", image.shape[2], image.shape[3])
        return ops.sigmoid(self.head(self.backbone(image)), name="mask.sigmoid")


@dataclass
class AlphaGrid:
    alpha: Tensor  # (N, 1, H/32, W/32)

    @property
    def shape(self):
        return self.alpha.shape

    def complement(self) -> Tensor:
        return ops.complement(self.alpha, name="alpha.complement")

    def numpy(self) -> np.ndarray:
        return self.alpha.data


@dataclass
class SegmentedPair:
    attended: Tensor   # (N, C, H, W)
    neglected: Tensor  # (N, C, H, W)
    mask: Tensor       # (N, 1, H, W), upsampled alpha


def mask_forward(image, net: MaskNet) -> AlphaGrid:
    x = as_image_batch(image, dtype=net.dtype)
    return AlphaGrid(net(x))


def upsample_mask(grid: AlphaGrid | Tensor, height: int, width: int) -> Tensor:
    alpha = grid.alpha if isinstance(grid, AlphaGrid) else grid
    return ops.upsample_bilinear(alpha, height, width, name="mask.upsample")


def segment(image, grid: AlphaGrid) -> SegmentedPair:
    x = as_image_batch(image, dtype=grid.alpha.dtype)
    _, _, h, w = x.shape
    mask = upsample_mask(grid, h, w)
    inverse = ops.upsample_bilinear(grid.complement(), h, w, name="mask.upsample_complement")
    attended = ops.mul(x, mask, name="segment.attended")
    neglected = ops.mul(x, inverse, name="segment.neglected")
    return SegmentedPair(attended=attended, neglected=neglected, mask=mask)
