# core/errors.py
from __future__ import annotations

from typing import Any, Optional


class AvanError(RuntimeError):
    """Base class for every failure raised by this package."""


class ValidationError(AvanError):
    """Bad usage, config or manifest. The CLI maps it to exit code 2."""


class DatasetError(AvanError):
    pass


class CheckpointError(AvanError):
    pass


class ShapeError(AvanError):
    def __init__(self, node: str, expected: Any, actual: Any, detail: str = ""):
        self.node = node
        self.expected = tuple(expected) if isinstance(expected, (list, tuple)) else expected
        self.actual = tuple(actual) if isinstance(actual, (list, tuple)) else actual
        msg = f"[shape] node={node} expected={self.expected} actual={self.actual}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NonFiniteError(AvanError):
    def __init__(self, name: str, where: str = "value", diagnostics: Optional[dict] = None):
        self.name = name
        self.where = where
        self.diagnostics = diagnostics or {}
        msg = f"[non-finite] {where}={name}"
        if self.diagnostics:
            msg += " " + " ".join(f"{k}={v}" for k, v in sorted(self.diagnostics.items()))
        super().__init__(msg)


