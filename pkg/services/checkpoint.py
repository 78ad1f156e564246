# services/checkpoint.py
"""
AVCK checkpoint container.

    b"AVCK" | u32 version | u32 header_len | header (canonical JSON) | tensor bytes

The header holds the run config, step counter, RNG state, Adam scalars and a
tensor directory (name, dtype, shape, offset, nbytes). Tensors follow in
sorted-name order as little-endian raw bytes, so save -> load -> save gives
the same file.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np

from core.errors import CheckpointError
from core.optim import AdamState

log = logging.getLogger("avan.checkpoint")

AVCK_MAGIC = b"AVCK"
AVCK_VERSION = 1
_PREAMBLE = struct.Struct("<4sII")

ADAM_M = "adam.m."
ADAM_V = "adam.v."


@dataclass
class Checkpoint:
    kind: str
    header: Dict[str, Any]
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def step(self) -> int:
        return int(self.header.get("step", 0))

    @property
    def config(self) -> Dict[str, Any]:
        return dict(self.header.get("config") or {})

    def model_tensors(self) -> Dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if not k.startswith(("adam.",))}

    def adam_state(self) -> Optional[AdamState]:
        meta = self.header.get("adam")
        if meta is None:
            return None
        state = AdamState(lr=meta["lr"], beta1=meta["beta1"], beta2=meta["beta2"],
                          epsilon=meta["epsilon"], t=int(meta["t"]))
        for k, v in self.tensors.items():
            if k.startswith(ADAM_M):
                state.m[k[len(ADAM_M):]] = v.copy()
            elif k.startswith(ADAM_V):
                state.v[k[len(ADAM_V):]] = v.copy()
        return state

    def rng(self) -> np.random.Generator:
        state = self.header.get("rng")
        gen = np.random.default_rng()
        if state:
            gen.bit_generator.state = state
        return gen


def _canonical(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode("utf-8")


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    names = sorted(ckpt.tensors)
    directory = []
    blobs = []
    offset = 0
    for name in names:
        arr = np.asarray(ckpt.tensors[name])
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(le).tobytes(order="C")
        directory.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape),
                          "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = dict(ckpt.header)
    header["kind"] = ckpt.kind
    header["tensors"] = directory
    head = _canonical(header)
    return _PREAMBLE.pack(AVCK_MAGIC, AVCK_VERSION, len(head)) + head + b"".join(blobs)


def decode_checkpoint(raw: bytes, source: str = "<bytes>") -> Checkpoint:
    if len(raw) < _PREAMBLE.size:
        raise CheckpointError(f"truncated checkpoint ({source})")
    magic, version, head_len = _PREAMBLE.unpack_from(raw)
    if magic != AVCK_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {magic!r} ({source})")
    if version != AVCK_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} ({source})")
    start = _PREAMBLE.size
    try:
        header = json.loads(raw[start:start + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{type(e).__name__}: {e} ({source})") from e
    body = raw[start + head_len:]
    tensors: Dict[str, np.ndarray] = {}
    for entry in header.pop("tensors", []):
        lo, n = int(entry["offset"]), int(entry["nbytes"])
        if lo + n > len(body):
            raise CheckpointError(f"tensor {entry['name']} runs past end of file ({source})")
        arr = np.frombuffer(body[lo:lo + n], dtype=np.dtype(entry["dtype"]))
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(arr.dtype.newbyteorder("="))
    kind = header.pop("kind", "unknown")
    return Checkpoint(kind=kind, header=header, tensors=tensors)


def save_checkpoint(path: Path | str, ckpt: Checkpoint) -> Path:
    path = Path(path)
    data = encode_checkpoint(ckpt)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(data)
        tmp.replace(path)
    except OSError as e:
        raise CheckpointError(f"{type(e).__name__}: {e} ({path})") from e
    log.info("[checkpoint] saved kind=%s path=%s tensors=%s bytes=%s", ckpt.kind, path, len(ckpt.tensors), len(data))
    return path


def load_checkpoint(path: Path | str, kind: Optional[str] = None) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"{type(e).__name__}: {e} ({path})") from e
    ckpt = decode_checkpoint(raw, str(path))
    if kind is not None and ckpt.kind != kind:
        raise CheckpointError(f"expected a {kind} checkpoint, {path} holds {ckpt.kind}")
    return ckpt


def pack_state(
    kind: str,
    state: Mapping[str, np.ndarray],
    config: Mapping[str, Any],
    step: int = 0,
    rng: Optional[np.random.Generator] = None,
    adam: Optional[AdamState] = None,
    extra: Optional[Mapping[str, Any]] = None,
) -> Checkpoint:
    tensors = {k: np.array(v, copy=True) for k, v in state.items()}
    header: Dict[str, Any] = {"config": dict(config), "step": int(step), "format_version": AVCK_VERSION}
    if rng is not None:
        header["rng"] = rng.bit_generator.state
    if adam is not None:
        header["adam"] = {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2,
                          "epsilon": adam.epsilon, "t": adam.t}
        for k, v in adam.m.items():
            tensors[ADAM_M + k] = np.array(v, copy=True)
        for k, v in adam.v.items():
            tensors[ADAM_V + k] = np.array(v, copy=True)
    if extra:
        header.update(extra)
    return Checkpoint(kind=kind, header=header, tensors=tensors)


def check_dims(node: str, expected: Mapping[str, Any], actual: Mapping[str, Any]) -> None:
    diff: Tuple[str, ...] = tuple(k for k in expected if k in actual and expected[k] != actual[k])
    if diff:
        exp = {k: expected[k] for k in diff}
        act = {k: actual[k] for k in diff}
        raise CheckpointError(f"[{node}] incompatible shapes: config {exp} vs checkpoint {act}")
