# core/base.py
from __future__ import annotations

from contextlib import contextmanager
from typing import Dict, Iterator, Mapping, Optional

import numpy as np

from core.errors import CheckpointError, ShapeError
from core.tensor import Tensor, parameter


class Module:
    """
    Named parameters, non-trainable buffers (batch-norm running statistics)
    and child modules. Dotted names ("stem.conv.w") are stable and used as
    checkpoint keys and optimizer-state keys.
    """

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.training = True
        self._params: Dict[str, Tensor] = {}
        self._buffers: Dict[str, np.ndarray] = {}
        self._children: Dict[str, "Module"] = {}

    # ---------- registration ----------

    def add_param(self, key: str, data: np.ndarray) -> Tensor:
        t = parameter(np.asarray(data, dtype=self.dtype), name=key)
        self._params[key] = t
        return t

    def add_buffer(self, key: str, data: np.ndarray) -> np.ndarray:
        arr = np.array(data, dtype=self.dtype, copy=True)
        self._buffers[key] = arr
        return arr

    def add_child(self, key: str, module: "Module") -> "Module":
        self._children[key] = module
        return module

    # ---------- traversal ----------

    def named_parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        out = {f"{prefix}{k}": p for k, p in self._params.items()}
        for ck, child in self._children.items():
            out.update(child.named_parameters(f"{prefix}{ck}."))
        return out

    def named_buffers(self, prefix: str = "") -> Dict[str, np.ndarray]:
        out = {f"{prefix}{k}": b for k, b in self._buffers.items()}
        for ck, child in self._children.items():
            out.update(child.named_buffers(f"{prefix}{ck}."))
        return out

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self._children.items():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def _modes(self) -> Dict[int, bool]:
        out = {id(self): self.training}
        for child in self._children.values():
            out.update(child._modes())
        return out

    def _restore_modes(self, modes: Dict[int, bool]) -> None:
        self.training = modes.get(id(self), self.training)
        for child in self._children.values():
            child._restore_modes(modes)

    @contextmanager
    def evaluating(self) -> Iterator["Module"]:
        """Eval mode for the duration of the block; every module's previous flag is put back after."""
        modes = self._modes()
        self.eval()
        try:
            yield self
        finally:
            self._restore_modes(modes)

    def zero_grad(self) -> None:
        for p in self.named_parameters().values():
            p.grad = None

    # ---------- state ----------

    def state_dict(self, prefix: str = "") -> Dict[str, np.ndarray]:
        out = {k: p.data for k, p in self.named_parameters(prefix).items()}
        out.update(self.named_buffers(prefix))
        return out

    def load_state_dict(self, state: Mapping[str, np.ndarray], prefix: str = "", strict: bool = True) -> None:
        targets: Dict[str, np.ndarray] = {k: p.data for k, p in self.named_parameters(prefix).items()}
        targets.update(self.named_buffers(prefix))
        missing = [k for k in targets if k not in state]
        if strict and missing:
            raise CheckpointError(f"[load] missing tensors: {missing[:8]}{' ...' if len(missing) > 8 else ''}")
        for k, dst in targets.items():
            src: Optional[np.ndarray] = state.get(k)
            if src is None:
                continue
            if tuple(src.shape) != tuple(dst.shape):
                raise ShapeError(f"load.{k}", dst.shape, src.shape)
            dst[...] = src.astype(dst.dtype, copy=False)

