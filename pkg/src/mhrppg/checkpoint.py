"""Binary checkpoint container.

Layout (little-endian)::

    magic    8 bytes  b"RPPGCKPT"
    version  uint32   (currently 1)
    meta_len uint32, meta  UTF-8 JSON (sorted keys), may be empty
    count    uint32
    count records, sorted by name:
        name_len uint32, name UTF-8
        rank     uint32, dims uint64 * rank
        data     float64 * prod(dims), C-order

Output is a pure function of the tensors and metadata, so identical training
runs give byte-identical files.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .errors import DataError

MAGIC = b"RPPGCKPT"
VERSION = 1


def save_checkpoint(path, tensors: dict, meta: dict | None = None):
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            a = np.ascontiguousarray(tensors[name], dtype="<f8")
            nb = name.encode()
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
            fh.write(a.tobytes())


def load_checkpoint(path):
    """Returns ``(tensors, meta)``."""
    try:
        blob = open(path, "rb").read()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if blob[:8] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    try:
        version, meta_len = struct.unpack_from("<II", blob, 8)
        if version != VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        pos = 16
        meta = json.loads(blob[pos:pos + meta_len].decode()) if meta_len else {}
        pos += meta_len
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", blob, pos)
            name = blob[pos + 4:pos + 4 + n].decode()
            pos += 4 + n
            (rank,) = struct.unpack_from("<I", blob, pos)
            dims = struct.unpack_from(f"<{rank}Q", blob, pos + 4)
            pos += 4 + 8 * rank
            size = int(np.prod(dims, dtype=np.int64))
            data = np.frombuffer(blob, dtype="<f8", count=size, offset=pos)
            tensors[name] = data.reshape(dims).astype(np.float64)
            pos += 8 * size
    except (struct.error, ValueError) as exc:
        raise DataError(f"{path}: truncated or corrupt checkpoint ({exc})") from exc
    if pos != len(blob):
        raise DataError(f"{path}: {len(blob) - pos} trailing bytes")
    return tensors, meta
