from __future__ import annotations

import numpy as np
import pytest

from semiclassic_lab.grid import PhaseGrid, SpatialGrid
from semiclassic_lab.states import DensityOperator, PhaseSpaceDensity


def gaussian_orbital(grid: SpatialGrid, eps: float, x0: float = 0.0) -> np.ndarray:
    """``(pi eps)^{-1/4} exp(-(x - x0)^2 / (2 eps))`` with the displacement wrapped onto the torus."""
    d = (grid.nodes - x0 + grid.L / 2) % grid.L - grid.L / 2
    return (np.pi * eps) ** -0.25 * np.exp(-(d**2) / (2 * eps))


def gaussian_projector(grid: SpatialGrid, eps: float, x0: float = 0.0) -> DensityOperator:
    phi = gaussian_orbital(grid, eps, x0)
    return DensityOperator(np.outer(phi, phi.conj()), 1.0, eps, grid)


def random_state(grid: SpatialGrid, eps: float, rng: np.random.Generator, N: float = 1.0, rank: int | None = None):
    """Random Hermitian positive kernel with ``tr = N`` and spectrum well inside ``[0, 1]``."""
    n = grid.n
    r = n if rank is None else rank
    A = rng.normal(size=(n, r)) + 1j * rng.normal(size=(n, r))
    M = A @ A.conj().T
    M *= N / np.trace(M).real
    return DensityOperator(M / grid.h, N, eps, grid)


def rough_field(nu: float, n: int = 512, L: float = 8.0, v_max: float = 4.0, seed: int = 0) -> PhaseSpaceDensity:
    """Seed-fixed random phase-space field with spectrum ``(1 + |xi|^2)^{-(nu+1)/2}``.

    In two phase-space dimensions this sits exactly at the borderline of ``H^nu``,
    which makes the mollifier rates sharp.  A Gaussian envelope keeps it away
    from the box edges.
    """
    g = SpatialGrid(L, n)
    pg = PhaseGrid(g, v_max, n)
    rng = np.random.default_rng(seed)
    kx = 2 * np.pi * np.fft.fftfreq(n, d=g.h)
    kv = 2 * np.pi * np.fft.fftfreq(n, d=pg.dv)
    amp = (1 + kx[None, :] ** 2 + kv[:, None] ** 2) ** (-(nu + 1) / 2)
    z = (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))) * amp
    f = np.fft.ifft2(z).real
    X, V = pg.mesh()
    W = f * np.exp(-((X - L / 2) ** 2 + V**2) / 2)
    return PhaseSpaceDensity(W / np.abs(W).max(), pg, 1.0, 1.0)


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def grid64():
    return SpatialGrid(2.0, 64)
