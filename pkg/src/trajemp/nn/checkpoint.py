"""Binary parameter checkpoints.

Layout (all integers little-endian u32)::

    b"EMPW" | version | n_params |
        per parameter: name_len | name (utf-8) | rank | dims... | float32 payload

Values are stored as float32, so a save/load round trip rounds parameters
to single precision.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

MAGIC = b"EMPW"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save(path: str | Path, named: Iterable[tuple[str, np.ndarray]]) -> None:
    items = [(name, np.asarray(arr)) for name, arr in named]
    parts = [MAGIC, struct.pack("<II", VERSION, len(items))]
    for name, arr in items:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load(path: str | Path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, off)
            off += 4
            name = buf[off : off + n].decode("utf-8")
            off += n
            (rank,) = struct.unpack_from("<I", buf, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}I", buf, off)
            off += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(dims)
            off += 4 * size
            out[name] = arr.astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint") from exc
    return out


def load_into(module, values: Mapping[str, np.ndarray]) -> None:
    """Copy stored arrays into a module's parameters, matching by name and shape."""
    params = dict(module.named_parameters())
    missing = sorted(set(params) - set(values))
    extra = sorted(set(values) - set(params))
    if missing or extra:
        raise CheckpointError(f"parameter name mismatch; missing={missing} unexpected={extra}")
    for name, p in params.items():
        if values[name].shape != p.shape:
            raise CheckpointError(f"{name}: shape {values[name].shape} != expected {p.shape}")
        p.data = np.array(values[name], dtype=np.float64)
