"""SCOPEv1 checkpoint container.

Layout (all integers little-endian)::

    b"SCOPEv1"
    u32 parameter count
    repeated: u32 name length, UTF-8 name, u32 rank, u64 extents[rank],
              float64 data[prod(extents)]

Parameters are stored in the network's canonical order.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .model import param_shapes

MAGIC = b"SCOPEv1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(params: dict[str, np.ndarray], path: str | os.PathLike) -> None:
    chunks = [MAGIC, struct.pack("<I", len(params))]
    for name in param_shapes():
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack(f"<I{arr.ndim}Q", arr.ndim, *arr.shape))
        chunks.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if not buf.startswith(MAGIC):
        raise CheckpointError("bad magic")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CheckpointError("truncated checkpoint")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    (count,) = take("<I")
    params = {}
    for _ in range(count):
        (nlen,) = take("<I")
        if pos + nlen > len(buf):
            raise CheckpointError("truncated checkpoint")
        name = buf[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = take("<I")
        shape = take(f"<{rank}Q")
        n = int(np.prod(shape, dtype=np.int64))
        if pos + 8 * n > len(buf):
            raise CheckpointError("truncated checkpoint")
        params[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * n
    if pos != len(buf):
        raise CheckpointError("trailing bytes after last parameter")

    expected = param_shapes()
    if set(params) != set(expected):
        raise CheckpointError(f"parameter names do not match network: {sorted(set(params) ^ set(expected))}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise CheckpointError(f"{name}: checkpoint shape {params[name].shape}, network expects {shape}")
    return params
