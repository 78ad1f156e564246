# core/tensor.py
"""
Reverse-mode tensor engine.

A Tensor wraps an ndarray plus the closure that maps the upstream gradient to
one gradient per parent. Primitives live in core/ops.py; a Graph binds a
forward program to named parameters so it can be evaluated and differentiated
by name.
"""
from __future__ import annotations

from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from core.errors import ShapeError, ValidationError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

DTYPES = {"float32": np.float32, "float64": np.float64}


def resolve_dtype(name: str | np.dtype | type) -> np.dtype:
    if isinstance(name, str):
        try:
            return np.dtype(DTYPES[name.strip().lower()])
        except KeyError:
            raise ValidationError(f"unsupported dtype {name!r} (use float32 or float64)") from None
    return np.dtype(name)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "op", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: Optional[str] = None,
        dtype=None,
        op: str = "leaf",
        _parents: Tuple["Tensor", ...] = (),
        _backward: Optional[BackwardFn] = None,
    ):
        arr = np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.op = op
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(self.name or self.op or "item", (), self.shape, "item() needs a single element")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label}, requires_grad={self.requires_grad})"


def as_tensor(value, dtype=None, name: Optional[str] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False, name=name, dtype=dtype)


def parameter(data, name: str, dtype=None) -> Tensor:
    return Tensor(np.array(data, dtype=dtype, copy=True), requires_grad=True, name=name)


def topo_order(outputs: Iterable[Tensor]) -> List[Tensor]:
    """Every node appears after all of its parents. Iterative so deep nets don't hit the recursion limit."""
    order: List[Tensor] = []
    seen: set[int] = set()
    for root in outputs:
        if id(root) in seen:
            continue
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor) -> List[Tensor]:
    if loss.data.size != 1:
        raise ShapeError(loss.name or loss.op, (), loss.shape, "loss must be a scalar")
    order = topo_order([loss])
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        parent_grads = node._backward(node.grad)
        for parent, g in zip(node._parents, parent_grads):
            if g is None or not parent.requires_grad:
                continue
            if g.shape != parent.data.shape:
                raise ShapeError(f"{node.op}.backward", parent.data.shape, g.shape)
            parent.grad = g if parent.grad is None else parent.grad + g
    return order


class Graph:
    """
    A forward program over named inputs and named parameters.

    `build(inputs)` receives the bound inputs as Tensors and returns named
    output Tensors; parameters are closed over by the builder and listed here
    so gradients can be reported by name.
    """

    def __init__(
        self,
        build: Callable[[Dict[str, Tensor]], Dict[str, Tensor]],
        params: Optional[Mapping[str, Tensor]] = None,
        input_names: Optional[Sequence[str]] = None,
        name: str = "graph",
    ):
        self.build = build
        self.params: Dict[str, Tensor] = dict(params or {})
        self.input_names = tuple(input_names or ())
        self.name = name
        self.nodes: List[Tensor] = []
        self.outputs: Dict[str, Tensor] = {}

    def evaluate(self, inputs: Mapping[str, object], dtype=None) -> Dict[str, Tensor]:
        missing = [n for n in self.input_names if n not in inputs]
        if missing:
            raise ValidationError(f"[graph] {self.name}: unbound inputs {missing}")
        bound = {k: as_tensor(v, dtype=dtype, name=k) for k, v in inputs.items()}
        out = self.build(bound)
        self.outputs = dict(out)
        self.nodes = topo_order(self.outputs.values())
        return self.outputs

    def gradients(self, loss: str | Tensor = "loss") -> Dict[str, np.ndarray]:
        if not self.outputs:
            raise ValidationError(f"[graph] {self.name}: gradients requested before evaluate")
        node = loss if isinstance(loss, Tensor) else self.outputs.get(loss)
        if node is None:
            raise ValidationError(f"[graph] {self.name}: no output named {loss!r}")
        backward(node)
        grads: Dict[str, np.ndarray] = {}
        for pname, p in self.params.items():
            if not p.requires_grad:
                continue
            grads[pname] = p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
        return grads


def evaluate(graph: Graph, inputs: Mapping[str, object], dtype=None) -> Dict[str, Tensor]:
    return graph.evaluate(inputs, dtype=dtype)


def gradients(graph: Graph, loss: str | Tensor = "loss") -> Dict[str, np.ndarray]:
    return graph.gradients(loss)


