"""WFGRID1 grid snapshots.

Layout: the 8-byte magic ``WFGRID1\\0``, a little-endian uint32 header
length, a UTF-8 JSON header, then the array as row-major little-endian
float64.  The header carries ``dims``, ``origin``, ``extent``, ``h``,
``dt``, ``time_index``, ``endianness`` ("LE") and ``dtype`` ("f64").
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import BadMagic, HeaderMismatch, TruncatedPayload, ValidationError

MAGIC = b"WFGRID1\0"
_REQUIRED = ("dims", "origin", "extent", "h", "dt", "time_index", "endianness", "dtype")

__all__ = ["MAGIC", "encode_snapshot", "decode_snapshot", "write_snapshot", "read_snapshot",
           "write_field_snapshots"]


def _header_for(arr, grid=None, time_index=0, origin=None, extent=None, h=None, dt=None):
    if grid is not None:
        origin = grid.origin.tolist() if origin is None else origin
        extent = grid.extent.tolist() if extent is None else extent
        h = grid.h if h is None else h
        dt = grid.dt if dt is None else dt
    return {
        "dims": [int(k) for k in arr.shape],
        "origin": [float(v) for v in (origin if origin is not None else [0.0] * arr.ndim)],
        "extent": [float(v) for v in (extent if extent is not None else arr.shape)],
        "h": float(h if h is not None else 1.0),
        "dt": float(dt if dt is not None else 0.0),
        "time_index": int(time_index),
        "endianness": "LE",
        "dtype": "f64",
    }


def encode_snapshot(arr, grid=None, time_index=0, **header_kw):
    """Bytes of a snapshot holding ``arr``."""
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValidationError("snapshot data must be finite")
    header = _header_for(arr, grid, time_index, **header_kw)
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    return MAGIC + struct.pack("<I", len(hb)) + hb + payload


def decode_snapshot(buf):
    """Parse snapshot bytes into ``(array, header)``."""
    if len(buf) < 12 or buf[:8] != MAGIC:
        raise BadMagic("not a WFGRID1 snapshot")
    (hlen,) = struct.unpack("<I", buf[8:12])
    if len(buf) < 12 + hlen:
        raise TruncatedPayload("header extends past end of file")
    try:
        header = json.loads(buf[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderMismatch(f"unreadable header: {exc}") from exc
    missing = [k for k in _REQUIRED if k not in header]
    if missing:
        raise HeaderMismatch(f"header lacks {missing}")
    if header["endianness"] != "LE" or header["dtype"] != "f64":
        raise HeaderMismatch("only little-endian f64 payloads are supported")
    dims = tuple(int(k) for k in header["dims"])
    if any(k < 0 for k in dims):
        raise HeaderMismatch("negative dimension in header")
    need = 8 * int(np.prod(dims, dtype=np.int64))
    payload = buf[12 + hlen:]
    if len(payload) < need:
        raise TruncatedPayload(f"payload has {len(payload)} bytes, header needs {need}")
    if len(payload) > need:
        raise HeaderMismatch(f"payload has {len(payload) - need} trailing bytes")
    arr = np.frombuffer(payload, dtype="<f8").reshape(dims).astype(float)
    return arr, header


def write_snapshot(path, arr, grid=None, time_index=0, **header_kw):
    data = encode_snapshot(arr, grid, time_index, **header_kw)
    with open(path, "wb") as fh:
        fh.write(data)
    return path


def read_snapshot(path):
    with open(path, "rb") as fh:
        return decode_snapshot(fh.read())


def write_field_snapshots(field, directory, stem="u", every=1):
    """One snapshot per stored slice (every ``every``-th); returns the paths."""
    import os

    os.makedirs(directory, exist_ok=True)
    paths = []
    for k in range(0, field.data.shape[0], every):
        step = int(field.steps[k])
        p = os.path.join(directory, f"{stem}_{step:06d}.wfg")
        write_snapshot(p, field.data[k], field.grid, time_index=step)
        paths.append(p)
    return paths
