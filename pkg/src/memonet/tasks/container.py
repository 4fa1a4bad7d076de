"""Serialized dataset container.

Layout (all integers little-endian)::

    8 bytes   magic b"MEMODS01"
    uint32    header length n
    n bytes   UTF-8 JSON header {"meta": ..., "count": N, "fields": [{name, dtype, shape}]}
    N records, each the fields in header order as raw little-endian bytes
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from memonet.errors import CheckpointError, DimensionError

MAGIC = b"MEMODS01"


def write_container(path, fields: dict, meta: dict | None = None) -> int:
    """Write arrays sharing a leading record axis; returns the record count."""
    if not fields:
        raise DimensionError("no fields to write")
    arrays = {k: np.asarray(v) for k, v in fields.items()}
    counts = {len(a) for a in arrays.values()}
    if len(counts) != 1:
        raise DimensionError(f"fields disagree on record count: {sorted(counts)}")
    n = counts.pop()
    spec = []
    le = {}
    for name, a in arrays.items():
        dt = a.dtype.newbyteorder("<")
        le[name] = a.astype(dt, copy=False)
        spec.append({"name": name, "dtype": dt.str, "shape": list(a.shape[1:])})
    header = json.dumps({"meta": meta or {}, "count": n, "fields": spec}).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for i in range(n):
            for name in arrays:
                f.write(le[name][i].tobytes())
    return n


def read_container(path) -> tuple[dict, dict]:
    """Return ``(meta, fields)``."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a dataset container (bad magic)")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + hlen])
    n = header["count"]
    dtypes = [np.dtype([(f["name"], f["dtype"], tuple(f["shape"])) for f in header["fields"]])]
    body = raw[12 + hlen:]
    if len(body) != dtypes[0].itemsize * n:
        raise CheckpointError(f"{path}: truncated container")
    rec = np.frombuffer(body, dtype=dtypes[0], count=n)
    fields = {f["name"]: np.array(rec[f["name"]]) for f in header["fields"]}
    return header["meta"], fields
