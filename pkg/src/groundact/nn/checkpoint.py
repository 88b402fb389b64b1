"""Model checkpoint file: JSON header + little-endian float64 payload.

Layout:
    bytes 0..3   magic b"GACT"
    byte  4      format version (currently 1)
    bytes 5..8   uint32 LE header length
    header       UTF-8 JSON: {"params": [{"name", "shape"}, ...], ...extras}
    payload      concatenated float64 LE arrays in header order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"GACT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Malformed or truncated checkpoint file."""


class CheckpointVersionMismatch(CheckpointError):
    """Checkpoint written by an incompatible format version."""


def save_checkpoint(path, params: dict[str, np.ndarray], extra: dict | None = None):
    header = dict(extra or {})
    header["params"] = [{"name": k, "shape": list(v.shape)} for k, v in params.items()]
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(bytes([FORMAT_VERSION]))
        f.write(struct.pack("<I", len(hbytes)))
        f.write(hbytes)
        for v in params.values():
            f.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < 9 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version = raw[4]
    if version != FORMAT_VERSION:
        raise CheckpointVersionMismatch(f"{path}: format version {version} != {FORMAT_VERSION}")
    (hlen,) = struct.unpack("<I", raw[5:9])
    if len(raw) < 9 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    header = json.loads(raw[9 : 9 + hlen].decode("utf-8"))
    params = {}
    off = 9 + hlen
    for spec in header["params"]:
        shape = tuple(spec["shape"])
        n = int(np.prod(shape)) if shape else 1
        nbytes = n * 8
        if len(raw) < off + nbytes:
            raise CheckpointError(f"{path}: truncated payload at {spec['name']}")
        params[spec["name"]] = (
            np.frombuffer(raw[off : off + nbytes], dtype="<f8").astype(np.float64).reshape(shape)
        )
        off += nbytes
    return header, params
