"""Reader/writer for the MZF1 field format.

Layout: ``MZF1\\n``, a one-line JSON header, then little-endian float64 values
of the mask cells only (component-major, C order over the lattice).
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from .grid import Grid, ScalarField, VectorField, domain_from_descriptor

MAGIC = b"MZF1\n"


class MZFFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def encode(field) -> bytes:
    grid = field.grid
    header = {
        **grid.descriptor(),
        "components": field.components,
        "domain": field.domain.descriptor(),
        "mask": base64.b64encode(np.packbits(field.mask.ravel())).decode("ascii"),
    }
    line = json.dumps(header, separators=(",", ":")).encode("utf-8") + b"\n"
    payload = np.ascontiguousarray(field.values(), dtype="<f8").tobytes()
    return MAGIC + line + payload


def decode(blob: bytes):
    if not blob.startswith(MAGIC):
        raise MZFFormatError("missing MZF1 magic", 0)
    end = blob.find(b"\n", len(MAGIC))
    if end < 0:
        raise MZFFormatError("unterminated header line", len(MAGIC))
    try:
        header = json.loads(blob[len(MAGIC):end].decode("utf-8"))
        grid = Grid(tuple(header["shape"]), tuple(header["origin"]), tuple(header["spacing"]))
        comps = int(header["components"])
        if header["n"] != grid.n:
            raise ValueError("n disagrees with shape")
        bits = np.frombuffer(base64.b64decode(header["mask"]), dtype=np.uint8)
        mask = np.unpackbits(bits)[: grid.size].astype(bool)
        if mask.size != grid.size:
            raise ValueError("mask bit string too short")
        mask = mask.reshape(grid.shape)
    except (ValueError, KeyError, TypeError) as exc:
        raise MZFFormatError(f"bad header: {exc}", len(MAGIC)) from exc
    if comps not in (1, grid.n):
        raise MZFFormatError(f"unsupported component count {comps}", len(MAGIC))
    start = end + 1
    count = int(mask.sum()) * comps
    if len(blob) - start != 8 * count:
        raise MZFFormatError(f"payload holds {len(blob) - start} bytes, expected {8 * count}", start)
    vals = np.frombuffer(blob, dtype="<f8", count=count, offset=start).astype(float)
    if not np.all(np.isfinite(vals)):
        bad = int(np.flatnonzero(~np.isfinite(vals))[0])
        raise MZFFormatError("non-finite value in payload", start + 8 * bad)
    domain = domain_from_descriptor(header.get("domain", {}), mask)
    if comps == 1:
        data = np.zeros(grid.shape)
        data[mask] = vals
        return ScalarField(grid, domain, data, mask)
    data = np.zeros((comps,) + grid.shape)
    vals = vals.reshape(comps, -1)
    for i in range(comps):
        data[i][mask] = vals[i]
    return VectorField(grid, domain, data, mask)


def write(path, field) -> None:
    Path(path).write_bytes(encode(field))


def read(path):
    return decode(Path(path).read_bytes())
