# core/optim.py
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import numpy as np

from core.errors import NonFiniteError, ShapeError
from core.tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "AdamState":
        return AdamState(
            lr=self.lr, beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon, t=self.t,
            m={k: a.copy() for k, a in self.m.items()},
            v={k: a.copy() for k, a in self.v.items()},
        )


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
) -> Tuple[Mapping[str, Tensor], AdamState]:
    """
    One bias-corrected Adam update, in place on the parameter arrays.
    Gradients are validated before any parameter moves, so a non-finite
    gradient leaves both parameters and state untouched.
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ShapeError(f"adam.{name}", p.data.shape, g.shape)
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(name, where="gradient")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    step_size = state.lr / bc1

    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        denom = np.sqrt(v / bc2) + state.epsilon
        p.data -= (step_size * m / denom).astype(p.data.dtype)
    return params, state


def adam_soft_threshold(param: Tensor, state: AdamState, name: str, coeff: float) -> int:
    """
    Proximal L1 step in Adam's diagonal metric, applied after `adam_step`
    updated `param` on the smooth part of the loss. Entries whose shrink
    crosses zero become exactly 0. Returns the number of zero entries.
    """
    if coeff <= 0 or state.t == 0 or name not in state.v:
        return int(np.count_nonzero(param.data == 0))
    bc2 = 1.0 - state.beta2 ** state.t
    tau = state.lr * coeff / (np.sqrt(state.v[name] / bc2) + state.epsilon)
    w = param.data
    w[...] = (np.sign(w) * np.maximum(np.abs(w) - tau, 0.0)).astype(w.dtype)
    return int(np.count_nonzero(w == 0))
