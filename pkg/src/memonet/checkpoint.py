"""Checkpoint files.

Layout (little-endian)::

    8 bytes   magic b"MEMOCKP1"
    uint32    header length n
    n bytes   UTF-8 JSON header: free-form metadata plus
              "blocks": [{"name", "shape", "offset"}] (offsets in doubles)
    float64   concatenated parameter blocks
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from memonet.errors import CheckpointError

MAGIC = b"MEMOCKP1"


def save_checkpoint(path, header: dict, blocks: dict) -> None:
    """Write ``blocks`` (name -> array) as float64 after a JSON ``header``.

    The file is written to a temporary name and renamed, so a crash never
    leaves a half-written checkpoint behind.
    """
    index = []
    offset = 0
    datas = []
    for name, arr in blocks.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        index.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size
        datas.append(a)
    head = dict(header)
    head["blocks"] = index
    raw = json.dumps(head, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(raw)))
        f.write(raw)
        for a in datas:
            f.write(a.tobytes())
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict, dict]:
    """Return ``(header, blocks)``; raises :class:`CheckpointError` on a bad file."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    (n,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + n])
    body = np.frombuffer(raw[12 + n:], dtype="<f8")
    blocks = {}
    for b in header["blocks"]:
        size = int(np.prod(b["shape"], dtype=np.int64))
        if b["offset"] + size > body.size:
            raise CheckpointError(f"{path}: block {b['name']} is truncated")
        blocks[b["name"]] = body[b["offset"]:b["offset"] + size].reshape(b["shape"]).astype(np.float64)
    return header, blocks
