import struct

import numpy as np
import pytest

from conftest import random_state
from semiclassic_lab.errors import ConfigurationError
from semiclassic_lab.grid import PhaseGrid, SpatialGrid
from semiclassic_lab.io import dump, load, load_density, load_operator
from semiclassic_lab.states import PhaseSpaceDensity, wigner_transform


def test_operator_round_trip(tmp_path, grid64, rng):
    op = random_state(grid64, 1 / 16, rng, N=16.0)
    dump(op, tmp_path / "k.bin")
    back = load_operator(tmp_path / "k.bin")
    np.testing.assert_array_equal(back.kernel, op.kernel)
    assert (back.N, back.eps, back.grid) == (op.N, op.eps, op.grid)


def test_density_round_trip(tmp_path, grid64, rng):
    W = wigner_transform(random_state(grid64, 1 / 16, rng))
    dump(W, tmp_path / "w.bin")
    back = load_density(tmp_path / "w.bin")
    assert np.isrealobj(back.values)
    np.testing.assert_array_equal(back.values, W.values)
    assert back.grid == W.grid and back.grid.is_natural_for(1 / 16)
    assert (back.N, back.eps) == (W.N, W.eps)


def test_complex_density_and_custom_grid(tmp_path):
    pg = PhaseGrid(SpatialGrid(3.0, 8), 2.5, 16)
    vals = np.arange(128).reshape(16, 8) * (1 + 0.5j)
    dump(PhaseSpaceDensity(vals, pg, 0.2, 5.0), tmp_path / "c.bin")
    back = load(tmp_path / "c.bin")
    np.testing.assert_array_equal(back.values, vals)
    assert back.grid.v_max == 2.5 and back.grid.m == 16


def test_header_layout(tmp_path, grid64, rng):
    op = random_state(grid64, 0.125, rng, N=3.0)
    dump(op, tmp_path / "k.bin")
    raw = (tmp_path / "k.bin").read_bytes()
    assert len(raw) == 32 + 16 * 64 * 64 + 8
    assert struct.unpack_from("<4sIIIdd", raw) == (b"RSLK", 1, 64, 1, 0.125, 2.0)
    assert struct.unpack_from("<d", raw, len(raw) - 8) == (3.0,)
    first = struct.unpack_from("<dd", raw, 32)
    assert complex(*first) == op.kernel[0, 0]
    second = struct.unpack_from("<dd", raw, 48)
    assert complex(*second) == op.kernel[0, 1]  # row-major


def test_bad_files(tmp_path, grid64, rng):
    with pytest.raises(FileNotFoundError):
        load(tmp_path / "missing.bin")
    (tmp_path / "short.bin").write_bytes(b"RSLK")
    with pytest.raises(ConfigurationError):
        load(tmp_path / "short.bin")

    op = random_state(grid64, 0.125, rng)
    dump(op, tmp_path / "k.bin")
    raw = bytearray((tmp_path / "k.bin").read_bytes())

    bad = raw.copy()
    bad[:4] = b"XXXX"
    (tmp_path / "magic.bin").write_bytes(bytes(bad))
    with pytest.raises(ConfigurationError, match="magic"):
        load(tmp_path / "magic.bin")

    bad = raw.copy()
    struct.pack_into("<I", bad, 4, 2)
    (tmp_path / "version.bin").write_bytes(bytes(bad))
    with pytest.raises(ConfigurationError, match="version"):
        load(tmp_path / "version.bin")

    (tmp_path / "trunc.bin").write_bytes(bytes(raw[:-1]))
    with pytest.raises(ConfigurationError, match="bytes"):
        load(tmp_path / "trunc.bin")

    bad = raw.copy()
    struct.pack_into("<I", bad, 12, 2)
    (tmp_path / "d2.bin").write_bytes(bytes(bad))
    with pytest.raises(ConfigurationError, match="d = 2"):
        load(tmp_path / "d2.bin")


def test_kind_mismatch(tmp_path, grid64, rng):
    op = random_state(grid64, 0.125, rng)
    dump(op, tmp_path / "k.bin")
    dump(wigner_transform(op), tmp_path / "w.bin")
    with pytest.raises(ConfigurationError):
        load_density(tmp_path / "k.bin")
    with pytest.raises(ConfigurationError):
        load_operator(tmp_path / "w.bin")
    with pytest.raises(ConfigurationError):
        dump(np.eye(3), tmp_path / "x.bin")
