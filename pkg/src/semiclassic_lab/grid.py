"""Uniform periodic grids and the spectral transforms every other module builds on.

Conventions
-----------
Arrays over a :class:`SpatialGrid` hold samples ``f[j] = f(x_j)`` with
``x_j = j * h`` on ``[0, L)``.  The forward transform is the *unnormalized*
DFT, ``fhat[k] = sum_j f[j] exp(-i p_k x_j)``, stored in FFT order (``k = 0,
1, ..., n/2-1, -n/2, ..., -1``); :attr:`SpatialGrid.momentum_nodes` lists the
same wave numbers sorted.  With this convention Parseval reads::

    h * sum |f|**2 == (L / n**2) * sum |fhat|**2
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "SpatialGrid",
    "PhaseGrid",
    "forward_transform",
    "inverse_transform",
    "spectral_derivative",
    "centered_lift",
    "centered_displacement",
]


def _is_power_of_two(n: int) -> bool:
    return n >= 2 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class SpatialGrid:
    """Periodic grid of ``n`` points on ``[0, L)``."""

    length: float
    points: int

    def __post_init__(self):
        if not self.length > 0:
            raise ConfigurationError(f"grid length must be positive, got {self.length}")
        if not _is_power_of_two(int(self.points)):
            raise ConfigurationError(f"grid points must be a power of two, got {self.points}")
        object.__setattr__(self, "points", int(self.points))
        object.__setattr__(self, "length", float(self.length))

    @property
    def n(self) -> int:
        return self.points

    @property
    def L(self) -> float:
        return self.length

    @property
    def h(self) -> float:
        return self.length / self.points

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.points) * self.h

    @property
    def wavenumbers(self) -> np.ndarray:
        """Momenta ``2*pi*k/L`` in FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.points, d=self.h)

    @property
    def momentum_nodes(self) -> np.ndarray:
        """Momenta over the centered index set ``-n/2, ..., n/2-1``, increasing."""
        return np.fft.fftshift(self.wavenumbers)

    @property
    def nyquist_index(self) -> int:
        """Position of the unpaired ``-n/2`` mode in FFT order."""
        return self.points // 2

    def check(self, f: np.ndarray, axis: int = -1) -> np.ndarray:
        f = np.asarray(f)
        if f.shape[axis] != self.points:
            raise ConfigurationError(
                f"array length {f.shape[axis]} along axis {axis} does not match grid size {self.points}"
            )
        return f


@dataclass(frozen=True)
class PhaseGrid:
    """Tensor grid in ``(x, v)``: the spatial grid times ``m`` velocity nodes on ``[-v_max, v_max)``."""

    spatial: SpatialGrid
    v_max: float
    m: int
    # set by :meth:`natural`; the Wigner transform has an exact inverse only on this grid
    _natural_eps: float | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not self.v_max > 0:
            raise ConfigurationError(f"v_max must be positive, got {self.v_max}")
        if not _is_power_of_two(int(self.m)):
            raise ConfigurationError(f"velocity points must be a power of two, got {self.m}")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "v_max", float(self.v_max))

    @classmethod
    def natural(cls, spatial: SpatialGrid, eps: float) -> "PhaseGrid":
        """The velocity grid dual to the kernel's separations: ``dv = 2*pi*eps/L``, ``m = n``."""
        v_max = np.pi * eps / spatial.h
        return cls(spatial, v_max, spatial.n, _natural_eps=float(eps))

    @property
    def dv(self) -> float:
        return 2.0 * self.v_max / self.m

    @property
    def velocities(self) -> np.ndarray:
        return -self.v_max + np.arange(self.m) * self.dv

    @property
    def cell(self) -> float:
        return self.spatial.h * self.dv

    def is_natural_for(self, eps: float) -> bool:
        ref = np.pi * eps / self.spatial.h
        return self.m == self.spatial.n and abs(self.v_max - ref) <= 1e-12 * ref

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """``(X, V)`` arrays of shape ``(m, n)``."""
        return np.meshgrid(self.spatial.nodes, self.velocities)

    def velocity_wavenumbers(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.m, d=self.dv)


def forward_transform(f, grid: SpatialGrid | None = None, axis: int = -1) -> np.ndarray:
    """Unnormalized DFT along ``axis`` (FFT order)."""
    f = np.asarray(f)
    if grid is not None:
        grid.check(f, axis)
    return np.fft.fft(f, axis=axis)


def inverse_transform(fhat, grid: SpatialGrid | None = None, axis: int = -1) -> np.ndarray:
    fhat = np.asarray(fhat)
    if grid is not None:
        grid.check(fhat, axis)
    return np.fft.ifft(fhat, axis=axis)


def spectral_derivative(f, grid: SpatialGrid, order: int = 1, axis: int = -1) -> np.ndarray:
    """``order``-th derivative by multiplication with ``(i p)**order``.

    The unpaired Nyquist mode is zeroed for odd orders so real input stays real.
    Returns a real array when ``f`` is real.
    """
    if order < 0:
        raise ConfigurationError("derivative order must be non-negative")
    f = grid.check(np.asarray(f), axis)
    if order == 0:
        return f.copy()
    p = grid.wavenumbers
    mult = (1j * p) ** order
    if order % 2 == 1:
        mult[grid.nyquist_index] = 0.0
    shape = [1] * f.ndim
    shape[axis] = grid.n
    out = np.fft.ifft(np.fft.fft(f, axis=axis) * mult.reshape(shape), axis=axis)
    if np.isrealobj(f):
        return out.real
    return out


def centered_lift(grid: SpatialGrid) -> np.ndarray:
    """Node positions mapped into ``(-L/2, L/2]``."""
    x = grid.nodes
    return np.where(x > grid.L / 2, x - grid.L, x)


def centered_displacement(grid: SpatialGrid) -> np.ndarray:
    """Matrix ``d[i, j]`` of ``x_i - x_j`` wrapped into ``(-L/2, L/2]``."""
    idx = np.arange(grid.n)
    k = (idx[:, None] - idx[None, :]) % grid.n
    k = np.where(k > grid.n // 2, k - grid.n, k)
    return k * grid.h
