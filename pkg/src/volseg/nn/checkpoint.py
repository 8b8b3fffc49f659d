"""Versioned binary checkpoints: magic, JSON tensor table, raw float32 data."""

from __future__ import annotations

import json
import struct

import numpy as np

from .autodiff import Tensor
from .model import ModelConfig, _conv_shapes

MAGIC = b"VSEGCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(
    params: dict[str, Tensor], config: ModelConfig, extra: dict | None = None
) -> bytes:
    """Serialize params + config; save -> load -> save is byte-identical.

    `extra` carries small JSON metadata (e.g. the training step counter).
    """
    table = []
    blobs = []
    offset = 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name].data, dtype="<f4")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += len(blobs[-1])
    header = json.dumps(
        {"config": config.to_dict(), "extra": extra or {}, "tensors": table},
        sort_keys=True,
    ).encode("utf-8")
    return b"".join(
        [MAGIC, struct.pack("<II", VERSION, len(header)), header] + blobs
    )


def _read_header(data: bytes) -> dict:
    if len(data) < len(MAGIC) + 8:
        raise CheckpointError("checkpoint truncated before header")
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {data[:8]!r}")
    version, hlen = struct.unpack_from("<II", data, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = len(MAGIC) + 8
    if len(data) < start + hlen:
        raise CheckpointError("checkpoint truncated inside header")
    return json.loads(data[start : start + hlen].decode("utf-8"))


def read_checkpoint_extra(data: bytes) -> dict:
    return _read_header(data).get("extra", {})


def load_checkpoint(data: bytes) -> tuple[dict[str, Tensor], ModelConfig]:
    header = _read_header(data)
    _, hlen = struct.unpack_from("<II", data, len(MAGIC))
    config = ModelConfig.from_dict(header["config"])
    base = len(MAGIC) + 8 + hlen
    params: dict[str, Tensor] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        lo = base + entry["offset"]
        hi = lo + 4 * count
        if hi > len(data):
            raise CheckpointError(f"checkpoint truncated in tensor {entry['name']!r}")
        arr = np.frombuffer(data[lo:hi], dtype="<f4").reshape(shape).copy()
        params[entry["name"]] = Tensor(arr, requires_grad=True)
    validate_params(params, config)
    return params, config


def validate_params(params: dict[str, Tensor], config: ModelConfig) -> None:
    """Check the tensor set matches the architecture; name the offender."""
    expected: dict[str, tuple] = {}
    for name, shape in _conv_shapes(config).items():
        cout = shape[0]
        expected[name] = shape
        expected[name.replace(".w", ".b")] = (cout,)
        if name != "head.w":
            expected[name.replace(".w", ".g")] = (cout,)
            expected[name.replace(".w", ".beta")] = (cout,)
    for name, shape in expected.items():
        if name not in params:
            raise CheckpointError(f"missing tensor {name!r} for this model config")
        actual = tuple(params[name].shape)
        if actual != shape:
            raise CheckpointError(
                f"tensor {name!r} has shape {actual}, config expects {shape}"
            )
    extra = set(params) - set(expected)
    if extra:
        raise CheckpointError(f"unexpected tensors in checkpoint: {sorted(extra)}")
