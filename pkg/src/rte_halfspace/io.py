"""Persistence: ledger CSVs, binary snapshots and run manifests.

Snapshot layout (all little-endian)::

    magic    4s   b"RTEH"
    version  u32
    d        u32
    mode     u32  (0 slab, 1 box)
    M        u32
    Mbar     u32  (1 in slab mode)
    N        u32
    L        f64
    X_max    f64
    s        f64
    t        f64
    checksum u32  CRC-32 of the preceding header bytes and the payload
    payload  f64[Mbar*Mbar*M*N*N], spatial-major then plane-node order
"""
from __future__ import annotations

import csv
import io as _io
import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diagnostics import ENERGY_COLUMNS, LEDGER_COLUMNS, EnergyLedger, FormatError, RunLedger

SNAP_MAGIC = b"RTEH"
SNAP_VERSION = 1
_HEAD = struct.Struct("<4sIIIIIIdddd")
_CRC = struct.Struct("<I")


@dataclass
class Snapshot:
    t: float
    u: np.ndarray
    d: int
    mode: str
    M: int
    Mbar: int
    N: int
    L: float
    X_max: float
    s: float


def _fmt17(v: float) -> str:
    return format(float(v), ".17g")


def _write_table(table, path):
    buf = _io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for row in table.rows:
        w.writerow([_fmt17(v) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def _read_table(cls, path):
    text = Path(path).read_text(encoding="utf-8")
    rows = list(csv.reader(_io.StringIO(text)))
    if not rows:
        raise FormatError(f"{path}: empty file, header expected")
    header = tuple(c.strip() for c in rows[0])
    if header != cls.columns:
        raise FormatError(f"{path}: columns {header} do not match {cls.columns}")
    table = cls()
    for k, r in enumerate(rows[1:], 2):
        if not r:
            continue
        if len(r) != len(cls.columns):
            raise FormatError(f"{path}:{k}: expected {len(cls.columns)} fields")
        try:
            vals = [float(v) for v in r]
        except ValueError as e:
            raise FormatError(f"{path}:{k}: {e}") from None
        try:
            table.append(vals)
        except FormatError as e:
            raise FormatError(f"{path}:{k}: {e}") from None
    return table


def write_ledger(ledger: RunLedger, path) -> None:
    """CSV with the fixed column set and 17 significant digits."""
    _write_table(ledger, path)


def read_ledger(path) -> RunLedger:
    return _read_table(RunLedger, path)


def write_energy_ledger(ledger: EnergyLedger, path) -> None:
    _write_table(ledger, path)


def read_energy_ledger(path) -> EnergyLedger:
    return _read_table(EnergyLedger, path)


def write_snapshot(path, u, t, *, s, L, X_max, mode="slab", d=3) -> None:
    u = np.ascontiguousarray(u, dtype="<f8")
    N = u.shape[-1]
    M = u.shape[-3]
    Mbar = u.shape[0] if mode == "box" else 1
    head = _HEAD.pack(SNAP_MAGIC, SNAP_VERSION, d, 0 if mode == "slab" else 1, M, Mbar, N,
                      float(L), float(X_max), float(s), float(t))
    payload = u.tobytes(order="C")
    crc = zlib.crc32(payload, zlib.crc32(head))
    with open(path, "wb") as f:
        f.write(head)
        f.write(_CRC.pack(crc))
        f.write(payload)


def read_snapshot(path) -> Snapshot:
    data = Path(path).read_bytes()
    if len(data) < _HEAD.size + _CRC.size:
        raise FormatError(f"{path}: truncated snapshot header")
    head = data[:_HEAD.size]
    magic, ver, d, mode, M, Mbar, N, L, X_max, s, t = _HEAD.unpack(head)
    if magic != SNAP_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if ver != SNAP_VERSION:
        raise FormatError(f"{path}: unsupported version {ver}")
    (crc,) = _CRC.unpack(data[_HEAD.size:_HEAD.size + _CRC.size])
    payload = data[_HEAD.size + _CRC.size:]
    n = Mbar * Mbar * M * N * N if mode == 1 else M * N * N
    if len(payload) != 8 * n:
        raise FormatError(f"{path}: payload has {len(payload) // 8} values, expected {n}")
    if zlib.crc32(payload, zlib.crc32(head)) != crc:
        raise FormatError(f"{path}: checksum mismatch")
    shape = (Mbar, Mbar, M, N, N) if mode == 1 else (M, N, N)
    u = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(float)
    return Snapshot(t, u, d, "slab" if mode == 0 else "box", M, Mbar, N, L, X_max, s)


def write_manifest(path, record: dict) -> None:
    Path(path).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def software_versions() -> dict:
    import platform

    import mpmath
    import scipy

    from . import __version__
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "mpmath": mpmath.__version__, "artifact": __version__}
