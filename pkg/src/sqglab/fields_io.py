"""Flat binary field files: an 8-byte little-endian header length, a JSON header,
then the raw little-endian float64 arrays in header order."""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


def write_fields(path, arrays: dict, **meta) -> Path:
    path = Path(path)
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = {"format_version": FORMAT_VERSION, "arrays": entries}
    header.update(meta)
    hb = json.dumps(header, sort_keys=True).encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(hb)))
        fh.write(hb)
        for b in blobs:
            fh.write(b)
    return path


def read_fields(path):
    """Return (header, {name: array})."""
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError("truncated field file")
    (n,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8:8 + n].decode())
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported format version {header.get('format_version')}")
    body = raw[8 + n:]
    out = {}
    for e in header["arrays"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        a = np.frombuffer(body, dtype="<f8", count=count, offset=e["offset"])
        out[e["name"]] = a.reshape(e["shape"]).astype(float)
    return header, out


def write_basis(path, basis):
    """Eigenbasis cache: payload arrays plus the grid description."""
    return write_fields(path, basis.to_arrays(), n_modes=int(basis.n_modes),
                        grid=list(basis.shape), spacing=[basis.hx, basis.hy],
                        domain_kind=basis.domain.kind)


def read_basis(path):
    from .spectral import EigenBasis, discretized, rectangle
    header, arrs = read_fields(path)
    hx, hy = header["spacing"]
    nx, ny = header["grid"]
    if header["domain_kind"] == "rectangle":
        dom = rectangle(hx * (nx - 1), hy * (ny - 1))
        return EigenBasis(dom, arrs["mu"], m_idx=arrs["m_idx"].astype(int),
                          n_idx=arrs["n_idx"].astype(int), grid_shape=(nx - 2, ny - 2))
    dom = discretized(arrs["mask"] > 0.5, hx)
    return EigenBasis(dom, arrs["mu"], vectors=arrs["vectors"])
