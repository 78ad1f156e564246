# core/gradcheck.py
from __future__ import annotations

import logging
from typing import Dict, Iterable, Mapping, Optional

import numpy as np

from core.errors import ValidationError
from core.tensor import Graph

log = logging.getLogger("avan.gradcheck")


def _loss_value(graph: Graph, inputs: Mapping[str, object], loss: str) -> float:
    return float(graph.evaluate(inputs)[loss].data)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = float(np.linalg.norm(analytic - numeric))
    den = float(np.linalg.norm(analytic) + np.linalg.norm(numeric))
    return 0.0 if den == 0.0 else num / den


def grad_check_detail(
    graph: Graph,
    inputs: Mapping[str, object],
    loss: str = "loss",
    h: float = 1e-5,
    names: Optional[Iterable[str]] = None,
) -> Dict[str, float]:
    """Relative error per parameter between reverse-mode and central-difference gradients."""
    selected = list(names) if names is not None else [n for n, p in graph.params.items() if p.requires_grad]
    for n in selected:
        if graph.params[n].data.dtype != np.float64:
            raise ValidationError(f"[gradcheck] parameter {n} is {graph.params[n].data.dtype}; 64-bit required")

    graph.evaluate(inputs)
    analytic = graph.gradients(loss)

    errors: Dict[str, float] = {}
    for n in selected:
        p = graph.params[n]
        numeric = np.zeros_like(p.data)
        for idx in np.ndindex(*p.data.shape):
            orig = p.data[idx]
            p.data[idx] = orig + h
            up = _loss_value(graph, inputs, loss)
            p.data[idx] = orig - h
            down = _loss_value(graph, inputs, loss)
            p.data[idx] = orig
            numeric[idx] = (up - down) / (2.0 * h)
        errors[n] = relative_error(analytic[n], numeric)
    return errors


def grad_check(
    graph: Graph,
    inputs: Mapping[str, object],
    tolerance: float = 1e-6,
    loss: str = "loss",
    h: float = 1e-5,
    names: Optional[Iterable[str]] = None,
) -> float:
    """Worst relative error over all checked parameters. Reports, never raises on a miss."""
    errors = grad_check_detail(graph, inputs, loss=loss, h=h, names=names)
    worst = max(errors.values(), default=0.0)
    if worst > tolerance:
        bad = {k: f"{v:.2e}" for k, v in errors.items() if v > tolerance}
        log.warning("[gradcheck] graph=%s worst=%.3e tol=%.1e over=%s", graph.name, worst, tolerance, bad)
    return worst
