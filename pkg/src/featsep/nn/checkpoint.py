"""Binary checkpoint format for model parameters.

Layout (little-endian throughout):

    magic   4 bytes  b"FSCK"
    version u32      currently 1
    count   u32      number of entries
    entry*  name_len u32, name utf-8, ndim u32, dims u32*, payload float32*

Entries are sorted by name. A text sidecar (<path>.txt) lists name, shape and
a crc32 of each payload for quick inspection.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"FSCK"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    sidecar = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype=np.float64)
        payload = arr.astype("<f4").tobytes()
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(payload)
        sidecar.append(f"{name} shape={'x'.join(map(str, arr.shape))} crc32={zlib.crc32(payload):08x}")
    path.write_bytes(b"".join(chunks))
    Path(str(path) + ".txt").write_text("\n".join(sidecar) + "\n")


def load_arrays(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CheckpointError(f"not a checkpoint file (bad magic): {path}")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    offset = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            name = raw[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            dims = struct.unpack_from(f"<{ndim}I", raw, offset)
            offset += 4 * ndim
            n_vals = int(np.prod(dims)) if ndim else 1
            payload = raw[offset:offset + 4 * n_vals]
            if len(payload) != 4 * n_vals:
                raise struct.error("short payload")
            offset += 4 * n_vals
        except struct.error as exc:
            raise CheckpointError(f"truncated checkpoint: {path}") from exc
        out[name] = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(dims)
    if offset != len(raw):
        raise CheckpointError(f"trailing bytes in checkpoint: {path}")
    return out


def save_model(path, model) -> None:
    save_arrays(path, model.state_arrays())


def load_model(path, model) -> None:
    """Load a checkpoint into an existing model; names must match exactly."""
    try:
        model.load_state_arrays(load_arrays(path))
    except KeyError as exc:
        raise CheckpointError(f"checkpoint/model parameter mismatch: {exc}") from exc
