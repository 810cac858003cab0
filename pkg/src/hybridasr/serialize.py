"""Small deterministic binary container: JSON header plus raw little-endian arrays.

Used for every model file so reruns with the same seed are byte-identical
(zip-based formats embed timestamps).
"""
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"HASR"


def write_arrays(path, meta, arrays):
    names = sorted(arrays)
    entries = []
    blobs = []
    for name in names:
        a = np.ascontiguousarray(arrays[name])
        if a.dtype.kind in "iuf":
            a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        entries.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape)})
        blobs.append(a.tobytes())
    header = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<I", len(header)) + header)
        for b in blobs:
            f.write(b)


def read_arrays(path):
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic")
    (n,) = struct.unpack_from("<I", data, 4)
    header = json.loads(data[8 : 8 + n].decode("utf-8"))
    pos = 8 + n
    arrays = {}
    for e in header["arrays"]:
        dt = np.dtype(e["dtype"])
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arrays[e["name"]] = np.frombuffer(data, dt, count, pos).reshape(e["shape"]).copy()
        pos += dt.itemsize * count
    return header["meta"], arrays
