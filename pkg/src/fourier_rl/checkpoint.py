"""FPC1 tensor checkpoints.

Layout: the 4 magic bytes ``FPC1`` followed by records until EOF. Each
record is ``u32 name_len | name (utf-8) | u32 rank | u32 dims[rank] |
f64 values[prod(dims)]``, all little-endian.

Networks are stored one tensor per parameter under
``<prefix>.<layer>.<activation>.weight`` / ``.bias``; a concat-input
(CLFF) first layer is marked by a scalar ``<prefix>.concat_input`` record.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .nn import ACTIVATIONS, LinearLayer, Mlp

MAGIC = b"FPC1"


class CheckpointFormatError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def encode(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC]
    for name, value in tensors.items():
        arr = np.asarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def decode(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != MAGIC:
        raise CheckpointFormatError("missing FPC1 magic", 0)
    out: dict[str, np.ndarray] = {}
    pos = 4
    n = len(data)

    def take(count, what):
        nonlocal pos
        if pos + count > n:
            raise CheckpointFormatError(f"truncated {what}", pos)
        chunk = data[pos : pos + count]
        pos += count
        return chunk

    while pos < n:
        start = pos
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        try:
            name = take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointFormatError("tensor name is not valid utf-8", start + 4) from None
        (rank,) = struct.unpack("<I", take(4, "rank"))
        if rank > 8:
            raise CheckpointFormatError(f"implausible rank {rank}", pos - 4)
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        values = np.frombuffer(take(8 * count, f"values of {name!r}"), dtype="<f8")
        if name in out:
            raise CheckpointFormatError(f"duplicate tensor {name!r}", start)
        out[name] = values.reshape(dims).astype(np.float64)
    return out


def save(path, tensors: dict[str, np.ndarray]) -> None:
    """Write atomically (temp file + rename)."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".fpc1-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(encode(tensors))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return decode(fh.read())


def mlp_tensors(net: Mlp, prefix: str) -> dict[str, np.ndarray]:
    out = {}
    if net.concat_input:
        out[f"{prefix}.concat_input"] = np.array(1.0)
    for i, layer in enumerate(net.layers):
        out[f"{prefix}.{i}.{layer.activation}.weight"] = layer.weights
        if layer.use_bias:
            out[f"{prefix}.{i}.{layer.activation}.bias"] = layer.biases
    return out


def mlp_from_tensors(tensors: dict[str, np.ndarray], prefix: str) -> Mlp:
    layers = {}
    for name, value in tensors.items():
        if not name.startswith(prefix + "."):
            continue
        parts = name[len(prefix) + 1 :].split(".")
        if len(parts) != 3:
            continue
        idx, act, kind = parts
        if act not in ACTIVATIONS or kind not in ("weight", "bias"):
            raise ValueError(f"unrecognised network tensor {name!r}")
        entry = layers.setdefault(int(idx), {"activation": act})
        entry[kind] = value
    if not layers:
        raise KeyError(f"no network stored under prefix {prefix!r}")
    built = []
    for i in range(len(layers)):
        if i not in layers or "weight" not in layers[i]:
            raise ValueError(f"network {prefix!r} is missing layer {i}")
        e = layers[i]
        built.append(LinearLayer(e["weight"].copy(), e.get("bias"), e["activation"]))
    concat = bool(tensors.get(f"{prefix}.concat_input", np.array(0.0)))
    return Mlp(built, concat_input=concat)
