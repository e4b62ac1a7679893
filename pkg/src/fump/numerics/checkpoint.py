"""Binary checkpoint container.

Layout::

    magic   8 bytes  b"FUMPCKPT"
    version u32 little-endian
    hlen    u64 little-endian, length of the JSON header
    header  UTF-8 JSON: {"config_hash", "tensors": [{"name", "shape", "offset"}], "sections": {...}}
    payload raw float64 little-endian values, tensors concatenated in header order

Named tensor groups (parameters, optimizer moments, memory trajectories) all
live in the payload; ``sections`` carries small JSON-able metadata such as
RNG state or the memory threshold.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"FUMPCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_container(path, tensors: dict[str, np.ndarray], config_hash: str, sections: dict | None = None) -> None:
    entries = []
    offset = 0
    chunks = []
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        chunks.append(arr.tobytes())
    header = json.dumps({"config_hash": config_hash, "tensors": entries, "sections": sections or {}},
                        sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(header)))
        fh.write(header)
        for c in chunks:
            fh.write(c)


def load_container(path) -> tuple[dict[str, np.ndarray], str, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", raw, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    start = 8 + struct.calcsize("<IQ")
    header = json.loads(raw[start:start + hlen])
    payload = np.frombuffer(raw, dtype="<f8", offset=start + hlen)
    tensors = {}
    for e in header["tensors"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        if e["offset"] + n > payload.size:
            raise CheckpointError(f"{path}: truncated payload at tensor {e['name']!r}")
        tensors[e["name"]] = payload[e["offset"]:e["offset"] + n].reshape(tuple(e["shape"])).astype(np.float64)
    return tensors, header["config_hash"], header["sections"]
