"""Binary state dumps.

Kernel file (``.bin``), all little-endian::

    offset  0  magic   b"RSLK"
            4  version u32 (= 1)
            8  n       u32
           12  d       u32 (= 1)
           16  eps     f64
           24  L       f64
           32  n*n complex entries as interleaved (re, im) f64, row-major
     end - 8   N       f64

Phase-space file: the same layout with magic ``b"RSLW"``, the pair ``(m, n)``
in place of ``(n, d)``, ``m*n`` entries (row ``a`` is velocity ``v_a``), and a
16-byte trailer ``(v_max, N)``.  Real densities are written with zero imaginary
parts and read back as real arrays.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .grid import PhaseGrid, SpatialGrid
from .states import DensityOperator, PhaseSpaceDensity

__all__ = ["dump", "load", "dump_operator", "dump_density", "load_operator", "load_density"]

VERSION = 1
_HEADER = struct.Struct("<4sIIIdd")


def _interleave(a: np.ndarray) -> bytes:
    a = np.ascontiguousarray(a, dtype="<c16")
    return a.tobytes()


def dump_operator(op: DensityOperator, path) -> None:
    head = _HEADER.pack(b"RSLK", VERSION, op.grid.n, 1, op.eps, op.grid.L)
    Path(path).write_bytes(head + _interleave(op.kernel) + struct.pack("<d", op.N))


def dump_density(W: PhaseSpaceDensity, path) -> None:
    g = W.grid
    head = _HEADER.pack(b"RSLW", VERSION, g.m, g.spatial.n, W.eps, g.spatial.L)
    tail = struct.pack("<dd", g.v_max, W.N)
    Path(path).write_bytes(head + _interleave(np.asarray(W.values, dtype=complex)) + tail)


def dump(state, path) -> None:
    if isinstance(state, DensityOperator):
        dump_operator(state, path)
    elif isinstance(state, PhaseSpaceDensity):
        dump_density(state, path)
    else:
        raise ConfigurationError(f"cannot dump object of type {type(state).__name__}")


def _read(path) -> bytes:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such dump file: {p}")
    return p.read_bytes()


def load(path):
    """Read a kernel or phase-space dump (dispatching on the magic bytes)."""
    raw = _read(path)
    if len(raw) < _HEADER.size:
        raise ConfigurationError(f"{path}: file too short for a dump header")
    magic, version, a, b, eps, L = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise ConfigurationError(f"{path}: unsupported dump version {version}")
    if magic == b"RSLK":
        n, d = a, b
        if d != 1:
            raise ConfigurationError(f"{path}: only d = 1 dumps are supported, got d = {d}")
        body = _body(raw, n * n, 8, path)
        (N,) = struct.unpack_from("<d", raw, len(raw) - 8)
        return DensityOperator(body.reshape(n, n), N, eps, SpatialGrid(L, n))
    if magic == b"RSLW":
        m, n = a, b
        body = _body(raw, m * n, 16, path)
        v_max, N = struct.unpack_from("<dd", raw, len(raw) - 16)
        spatial = SpatialGrid(L, n)
        grid = PhaseGrid(spatial, v_max, m)
        if grid.is_natural_for(eps):
            grid = PhaseGrid.natural(spatial, eps)
        vals = body.reshape(m, n)
        if not np.any(vals.imag):
            vals = vals.real.copy()
        return PhaseSpaceDensity(vals, grid, eps, N)
    raise ConfigurationError(f"{path}: unknown magic {magic!r}")


def _body(raw: bytes, count: int, tail: int, path) -> np.ndarray:
    expected = _HEADER.size + 16 * count + tail
    if len(raw) != expected:
        raise ConfigurationError(f"{path}: expected {expected} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype="<c16", count=count, offset=_HEADER.size).astype(complex)


def load_operator(path) -> DensityOperator:
    out = load(path)
    if not isinstance(out, DensityOperator):
        raise ConfigurationError(f"{path}: not a kernel dump")
    return out


def load_density(path) -> PhaseSpaceDensity:
    out = load(path)
    if not isinstance(out, PhaseSpaceDensity):
        raise ConfigurationError(f"{path}: not a phase-space dump")
    return out
