"""Matrix file formats.

JSON format (bit-exact round trip through repr of doubles):

    {"dim": m, "entries": [[[re, im], ...], ...]}   # row-major

Binary format: 16-byte header -- magic ``PVLB``, u32 little-endian dim,
two reserved u32 fields (zero) -- followed by dim*dim interleaved
little-endian f64 pairs (re, im), row-major.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .finite_vn import TracedMatrix

MAGIC = b"PVLB"
_HEADER = struct.Struct("<4sIII")


def to_json_obj(x: TracedMatrix) -> dict:
    ent = [[[float(v.real), float(v.imag)] for v in row] for row in x.entries]
    return {"dim": x.dim, "entries": ent}


def from_json_obj(obj: dict) -> TracedMatrix:
    dim = int(obj["dim"])
    rows = obj["entries"]
    if len(rows) != dim or any(len(r) != dim for r in rows):
        raise ValueError("entries shape does not match dim")
    a = np.array([[complex(re, im) for re, im in row] for row in rows])
    return TracedMatrix(a)


def save_json(x: TracedMatrix, path) -> None:
    Path(path).write_text(json.dumps(to_json_obj(x)))


def load_json(path) -> TracedMatrix:
    return from_json_obj(json.loads(Path(path).read_text()))


def save_binary(x: TracedMatrix, path) -> None:
    buf = bytearray(_HEADER.pack(MAGIC, x.dim, 0, 0))
    inter = np.empty((x.dim, x.dim, 2), dtype="<f8")
    inter[..., 0] = x.entries.real
    inter[..., 1] = x.entries.imag
    buf += inter.tobytes()
    Path(path).write_bytes(bytes(buf))


def load_binary(path) -> TracedMatrix:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError("truncated matrix file")
    magic, dim, _, _ = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}, expected {MAGIC!r}")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != 2 * dim * dim:
        raise ValueError(f"payload size {body.size} does not match dim {dim}")
    pairs = body.reshape(dim, dim, 2)
    return TracedMatrix(pairs[..., 0] + 1j * pairs[..., 1])


def load_matrix(path) -> TracedMatrix:
    """Dispatch on content: binary if the file starts with the magic."""
    p = Path(path)
    with open(p, "rb") as fh:
        head = fh.read(4)
    return load_binary(p) if head == MAGIC else load_json(p)
