# models/layers.py
from __future__ import annotations

from typing import Sequence

import numpy as np

from core import ops
from core.base import Module
from core.errors import ShapeError
from core.tensor import Tensor

DOWNSAMPLE = 32


def uniform_init(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(1, fan_in))
    return rng.uniform(-bound, bound, size=tuple(shape))


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True,
                 zero: bool = False, dtype=np.float64, label: str = "dense"):
        super().__init__(dtype)
        self.label = label
        w = np.zeros((n_out, n_in)) if zero else uniform_init(rng, (n_out, n_in), n_in)
        self.w = self.add_param("w", w)
        self.b = self.add_param("b", np.zeros(n_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.dense(x, self.w, self.b, name=self.label)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, stride: int, rng: np.random.Generator,
                 dtype=np.float64, label: str = "conv"):
        super().__init__(dtype)
        self.label = label
        self.stride = stride
        self.padding = k // 2
        self.w = self.add_param("w", uniform_init(rng, (c_out, c_in, k, k), c_in * k * k))
        self.b = self.add_param("b", np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding, name=self.label)


class BatchNorm(Module):
    def __init__(self, features: int, momentum: float = 0.9, dtype=np.float64, label: str = "bn"):
        super().__init__(dtype)
        self.label = label
        self.momentum = momentum
        self.gamma = self.add_param("gamma", np.ones(features))
        self.beta = self.add_param("beta", np.zeros(features))
        self.running_mean = self.add_buffer("running_mean", np.zeros(features))
        self.running_var = self.add_buffer("running_var", np.ones(features))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=self.training, momentum=self.momentum, name=self.label,
        )


class ResidualBlock(Module):
    """
    conv3x3(s2)-BN-ReLU, conv3x3-BN; the result is concatenated with the
    downsampled input (1x1 stride-2 conv) and fused by a 1x1 conv + ReLU.
    Halves the spatial size.
    """

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, momentum: float = 0.9,
                 dtype=np.float64, label: str = "block"):
        super().__init__(dtype)
        self.label = label
        self.conv1 = self.add_child("conv1", Conv2d(c_in, c_out, 3, 2, rng, dtype, f"{label}.conv1"))
        self.bn1 = self.add_child("bn1", BatchNorm(c_out, momentum, dtype, f"{label}.bn1"))
        self.conv2 = self.add_child("conv2", Conv2d(c_out, c_out, 3, 1, rng, dtype, f"{label}.conv2"))
        self.bn2 = self.add_child("bn2", BatchNorm(c_out, momentum, dtype, f"{label}.bn2"))
        self.down = self.add_child("down", Conv2d(c_in, c_out, 1, 2, rng, dtype, f"{label}.down"))
        self.fuse = self.add_child("fuse", Conv2d(2 * c_out, c_out, 1, 1, rng, dtype, f"{label}.fuse"))

    def __call__(self, x: Tensor) -> Tensor:
        main = ops.relu(self.bn1(self.conv1(x)))
        main = self.bn2(self.conv2(main))
        merged = ops.concat([main, self.down(x)], axis=1, name=f"{self.label}.concat")
        return ops.relu(self.fuse(merged), name=f"{self.label}.relu")


class Backbone(Module):
    """Stem conv (stride 2) plus four residual blocks: total downsampling 32."""

    def __init__(self, widths: Sequence[int], rng: np.random.Generator, in_channels: int = 3,
                 momentum: float = 0.9, dtype=np.float64, label: str = "backbone"):
        super().__init__(dtype)
        if len(widths) != 5:
            raise ShapeError(f"{label}.widths", 5, len(widths))
        self.label = label
        self.widths = tuple(int(w) for w in widths)
        self.stem = self.add_child("stem", Conv2d(in_channels, widths[0], 3, 2, rng, dtype, f"{label}.stem"))
        self.stem_bn = self.add_child("stem_bn", BatchNorm(widths[0], momentum, dtype, f"{label}.stem_bn"))
        self.blocks = []
        for i in range(4):
            blk = ResidualBlock(widths[i], widths[i + 1], rng, momentum, dtype, f"{label}.block{i + 1}")
            self.blocks.append(self.add_child(f"block{i + 1}", blk))

    @property
    def out_channels(self) -> int:
        return self.widths[-1]

    def __call__(self, x: Tensor) -> Tensor:
        h = ops.relu(self.stem_bn(self.stem(x)), name=f"{self.label}.stem_relu")
        for blk in self.blocks:
            h = blk(h)
        return h


def check_divisible(node: str, height: int, width: int) -> None:
    if height % DOWNSAMPLE or width % DOWNSAMPLE or height <= 0 or width <= 0:
        raise ShapeError(node, f"H, W divisible by {DOWNSAMPLE}", (height, width))
