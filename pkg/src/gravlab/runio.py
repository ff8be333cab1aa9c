"""Run-directory artifacts.

``states.bin`` is a sequence of little-endian records, one per snapshot::

    int64    n
    float64  L
    float64  t
    float64  h coefficients, n complex values as (re, im) pairs
    float64  psi coefficients, same layout

Coefficients are in numpy FFT order under the convention of
:mod:`gravlab.spectral_core`.  ``diagnostics.csv`` has one row per snapshot,
numbers printed with 17 significant digits.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import struct
import tempfile

import numpy as np

from .dirichlet_neumann import WaveState
from .spectral_core import Grid, SpectralField

HEADER = struct.Struct("<qdd")


def record_size(n: int) -> int:
    return HEADER.size + 2 * n * 16


def encode_state(state: WaveState) -> bytes:
    g = state.grid
    body = np.concatenate([state.h.coeffs, state.psi.coeffs]).astype("<c16")
    return HEADER.pack(g.n_points, g.length, state.t) + body.tobytes()


def decode_state(buf: bytes) -> WaveState:
    n, L, t = HEADER.unpack_from(buf, 0)
    body = np.frombuffer(buf, dtype="<c16", count=2 * n, offset=HEADER.size)
    g = Grid(int(n), float(L))
    h = SpectralField(g, body[:n].astype(complex), True)
    psi = SpectralField(g, body[n:].astype(complex), True)
    return WaveState(h, psi, float(t))


class StateWriter:
    def __init__(self, path, append: bool = False):
        self.fh = open(path, "ab" if append else "wb")

    def write(self, state: WaveState):
        self.fh.write(encode_state(state))
        self.fh.flush()

    def close(self):
        self.fh.close()


def read_states(path) -> list:
    """All complete records; a trailing partial record is ignored."""
    out = []
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0
    while pos + HEADER.size <= len(data):
        n = HEADER.unpack_from(data, pos)[0]
        size = record_size(n)
        if pos + size > len(data):
            break
        out.append(decode_state(data[pos : pos + size]))
        pos += size
    return out


def truncate_states(path, keep: int):
    """Cut ``states.bin`` after ``keep`` complete records."""
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0
    for _ in range(keep):
        n = HEADER.unpack_from(data, pos)[0]
        pos += record_size(n)
    with open(path, "r+b") as fh:
        fh.truncate(pos)


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return f"{float(x):.17g}"


class CsvWriter:
    def __init__(self, path, columns, append: bool = False):
        self.fh = open(path, "a" if append else "w", newline="")
        self.w = csv.writer(self.fh, lineterminator="\n")
        if not append:
            self.w.writerow(columns)
            self.fh.flush()

    def write(self, row):
        self.w.writerow([fmt(v) for v in row])
        self.fh.flush()

    def close(self):
        self.fh.close()


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_csv(path, columns, rows):
    w = CsvWriter(path, columns)
    for r in rows:
        w.write(r)
    w.close()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_json_atomic(path, obj):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
