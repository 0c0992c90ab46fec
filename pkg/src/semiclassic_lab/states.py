"""Density operators, phase-space densities, and the Wigner/Weyl bridge.

Normalizations (spatial dimension d = 1)
----------------------------------------
A :class:`DensityOperator` stores kernel samples ``K[i, j] ~ omega(x_i; x_j)``;
the operator acting on grid functions is the matrix ``h * K``, so
``tr omega = h * sum_i K[i, i]``.

The Wigner transform is::

    W(x, v) = (1 / 2 pi) * int omega(x + s/2; x - s/2) exp(-i s v / eps) ds

so that ``int W dx dv = eps * tr omega`` and ``int W dv = eps * omega(x; x)``.
Weyl quantization is its exact inverse::

    omega(x; y) = eps**-1 * int W((x + y)/2, v) exp(i v (x - y) / eps) dv

The prefactor ``eps**-1`` equals ``N`` whenever ``N * eps = 1``.

Discretization
--------------
On the natural phase grid (``dv = 2 pi eps / L``, ``m = n``) both maps are a
permutation of kernel entries into (center, separation) coordinates, a
band-limited half-cell shift of the odd-separation columns (their centers sit
between nodes), a unitary 2x2 mix of the unpaired separation ``-L/2`` with its
translate by ``L/2``, and a DFT over separations.  Every stage is unitary, so the
pair is exact to round-off and Hermitian kernels map to real ``W``.  Other
velocity grids are reached by evaluating the same trigonometric sum in ``v``
(band-limited resampling) and inverted by least squares.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, NamedTuple

import numpy as np
from scipy import special

from .errors import ConfigurationError, ProfileRejected, TruncationError
from .grid import PhaseGrid, SpatialGrid, centered_lift

__all__ = [
    "DensityOperator",
    "PhaseSpaceDensity",
    "SpatialDensity",
    "InteractionPotential",
    "Mollifier",
    "InitialState",
    "wigner_transform",
    "weyl_quantize",
    "mollify",
    "build_initial_state",
    "density_of",
    "velocity_marginal",
    "to_momentum",
    "from_momentum",
    "PROFILES",
]


@dataclass(frozen=True)
class DensityOperator:
    kernel: np.ndarray
    N: float
    eps: float
    grid: SpatialGrid

    def __post_init__(self):
        K = np.asarray(self.kernel, dtype=complex)
        if K.shape != (self.grid.n, self.grid.n):
            raise ConfigurationError(f"kernel shape {K.shape} does not match grid size {self.grid.n}")
        object.__setattr__(self, "kernel", K)

    @property
    def matrix(self) -> np.ndarray:
        """The operator as a matrix on grid functions (``h * K``)."""
        return self.grid.h * self.kernel

    @property
    def trace(self) -> float:
        return float(self.grid.h * np.trace(self.kernel).real)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.hermitian_part().matrix)

    def hermitian_part(self) -> "DensityOperator":
        return self.replace(0.5 * (self.kernel + self.kernel.conj().T))

    def replace(self, kernel) -> "DensityOperator":
        return DensityOperator(kernel, self.N, self.eps, self.grid)

    def validate(self, spectrum: bool = True) -> None:
        """Raise :class:`ConfigurationError` if a fermionic-density invariant fails."""
        K = self.kernel
        scale = max(np.abs(K).max(), 1e-300)
        if np.abs(K - K.conj().T).max() > 1e-12 * scale:
            raise ConfigurationError("kernel is not Hermitian")
        if abs(self.trace - self.N) > 1e-10 * self.N:
            raise ConfigurationError(f"trace {self.trace} differs from N = {self.N}")
        if spectrum:
            lam = self.eigenvalues()
            if lam.min() < -1e-10 or lam.max() > 1 + 1e-10:
                raise ConfigurationError(f"spectrum [{lam.min()}, {lam.max()}] outside [0, 1]")


@dataclass(frozen=True)
class PhaseSpaceDensity:
    values: np.ndarray  # shape (m, n): values[a, i] ~ W(x_i, v_a)
    grid: PhaseGrid
    eps: float
    N: float

    def __post_init__(self):
        W = np.asarray(self.values)
        if W.shape != (self.grid.m, self.grid.spatial.n):
            raise ConfigurationError(
                f"phase-space array shape {W.shape} does not match grid {(self.grid.m, self.grid.spatial.n)}"
            )
        object.__setattr__(self, "values", W)

    @property
    def mass(self) -> float:
        return float(self.grid.cell * self.values.sum().real)

    def l2_norm(self) -> float:
        return float(np.sqrt(self.grid.cell * np.sum(np.abs(self.values) ** 2)))

    def replace(self, values) -> "PhaseSpaceDensity":
        return PhaseSpaceDensity(values, self.grid, self.eps, self.N)


@dataclass(frozen=True)
class SpatialDensity:
    rho: np.ndarray
    grid: SpatialGrid

    @property
    def mass(self) -> float:
        return float(self.grid.h * np.sum(self.rho))


@dataclass(frozen=True)
class InteractionPotential:
    """Periodic pair potential ``V(x) = sum_k c_k exp(2 pi i k x / L)``."""

    fourier_coeffs: Mapping[int, complex]
    length: float

    def __post_init__(self):
        coeffs = {int(k): complex(c) for k, c in dict(self.fourier_coeffs).items() if c != 0}
        for k, c in coeffs.items():
            partner = coeffs.get(-k, 0.0)
            if partner != c.conjugate():
                raise ConfigurationError(f"V_hat[{-k}] must equal conj(V_hat[{k}]) for a real potential")
        object.__setattr__(self, "fourier_coeffs", coeffs)

    @classmethod
    def zero(cls, length: float) -> "InteractionPotential":
        return cls({}, length)

    @classmethod
    def cosine(cls, length: float, amplitude: float = 1.0, mode: int = 1) -> "InteractionPotential":
        """``amplitude * cos(2 pi mode x / L)``."""
        return cls({mode: amplitude / 2, -mode: amplitude / 2}, length)

    @property
    def is_zero(self) -> bool:
        return not self.fourier_coeffs

    @property
    def decay_weight(self) -> float:
        return float(
            sum(abs(c) * (1 + (2 * np.pi * abs(k) / self.length) ** 4) for k, c in self.fourier_coeffs.items())
        )

    def shifted(self, constant: float) -> "InteractionPotential":
        coeffs = dict(self.fourier_coeffs)
        coeffs[0] = coeffs.get(0, 0.0) + constant
        return InteractionPotential(coeffs, self.length)

    def coefficients_on(self, grid: SpatialGrid) -> np.ndarray:
        """Fourier coefficients as an FFT-ordered array over ``grid``."""
        if abs(grid.L - self.length) > 1e-12 * self.length:
            raise ConfigurationError(f"potential period {self.length} does not match grid length {grid.L}")
        out = np.zeros(grid.n, dtype=complex)
        for k, c in self.fourier_coeffs.items():
            if abs(k) >= grid.n // 2:
                raise ConfigurationError(f"potential mode {k} is not resolved by a grid of {grid.n} points")
            out[k % grid.n] = c
        return out

    def values_on(self, grid: SpatialGrid) -> np.ndarray:
        return np.fft.ifft(self.coefficients_on(grid) * grid.n).real

    def convolve(self, rho: np.ndarray, grid: SpatialGrid) -> np.ndarray:
        """``(V * rho)(x_j) = int V(x_j - y) rho(y) dy`` on the torus."""
        if self.is_zero:
            return np.zeros(grid.n)
        return np.fft.ifft(grid.L * self.coefficients_on(grid) * np.fft.fft(rho)).real

    def mean_field_modes(self, rho: np.ndarray, grid: SpatialGrid) -> dict[int, complex]:
        """Nonzero Fourier modes ``{k: a_k}`` of ``V * rho = sum_k a_k exp(i p_k x)``."""
        rho_hat = np.fft.fft(rho) / grid.n
        return {k: grid.L * c * rho_hat[k % grid.n] for k, c in self.fourier_coeffs.items()}


@dataclass(frozen=True)
class Mollifier:
    """Phase-space Gaussian ``g_k(x, v) = (k / 2 pi) exp(-k (x**2 + v**2) / 2)``."""

    k: float

    def __post_init__(self):
        if not self.k > 0:
            raise ConfigurationError("mollifier strength k must be positive")

    def __call__(self, x, v):
        return self.k / (2 * np.pi) * np.exp(-0.5 * self.k * (x**2 + v**2))

    def leakage(self, grid: PhaseGrid) -> float:
        """Mass of the continuous Gaussian outside the periodic box."""
        r = np.sqrt(self.k / 2)
        inside = special.erf(r * grid.spatial.L / 2) * special.erf(r * grid.v_max)
        return float(1.0 - inside)


# ---------------------------------------------------------------- momentum basis


def to_momentum(K: np.ndarray, h: float) -> np.ndarray:
    """Operator matrix in the plane-wave basis, ``M = F (h K) F^*`` with unitary ``F`` (FFT order)."""
    return h * np.fft.ifft(np.fft.fft(K, axis=0), axis=1)


def from_momentum(M: np.ndarray, h: float) -> np.ndarray:
    return np.fft.fft(np.fft.ifft(M, axis=0), axis=1) / h


# ---------------------------------------------------------------- Wigner machinery


class _Rotation:
    """Index tables for the (center, separation) rearrangement of an ``n x n`` kernel."""

    _cache: dict[int, "_Rotation"] = {}

    def __init__(self, n: int):
        self.n = n
        sep = np.rint(np.fft.fftfreq(n, d=1.0 / n)).astype(int)  # separation index m, FFT order
        center = np.arange(n)[:, None]
        up = -((-sep) // 2)  # ceil(m / 2)
        self.rows = (center + up[None, :]) % n
        self.cols = (center + up[None, :] - sep[None, :]) % n
        self.odd = (sep % 2) == 1
        p = np.fft.fftfreq(n)  # cycles per node, FFT order
        shift = np.exp(-1j * np.pi * p)  # move samples back by half a cell
        shift[n // 2] = 1.0  # unpaired mode: keep a real unit factor
        self.half_shift = shift
        self.seam = n // 2  # FFT-order column of the separation -L/2
        self.sep = sep

    @classmethod
    def get(cls, n: int) -> "_Rotation":
        if n not in cls._cache:
            cls._cache[n] = cls(n)
        return cls._cache[n]

    def forward(self, K: np.ndarray) -> np.ndarray:
        R = K[self.rows, self.cols]
        if self.n >= 2 and self.odd.any():
            R[:, self.odd] = np.fft.ifft(np.fft.fft(R[:, self.odd], axis=0) * self.half_shift[:, None], axis=0)
        s = self.seam
        col = R[:, s]
        R[:, s] = 0.5 * ((1 - 1j) * col + (1 + 1j) * np.roll(col, -self.n // 2))
        return R

    def inverse(self, R: np.ndarray) -> np.ndarray:
        R = np.array(R, dtype=complex, copy=True)
        s = self.seam
        u = R[:, s].copy()
        R[:, s] = 0.5 * ((1 + 1j) * u + (1 - 1j) * np.roll(u, -self.n // 2))
        if self.odd.any():
            R[:, self.odd] = np.fft.ifft(
                np.fft.fft(R[:, self.odd], axis=0) * self.half_shift.conj()[:, None], axis=0
            )
        K = np.empty_like(R)
        K[self.rows, self.cols] = R
        return K


def _velocity_matrix(spatial: SpatialGrid, eps: float, velocities: np.ndarray) -> np.ndarray:
    """``E[a, m]`` such that ``W[a, i] = (h / 2 pi) sum_m E[a, m] R[i, m]``."""
    rot = _Rotation.get(spatial.n)
    s = rot.sep * spatial.h
    E = np.exp(-1j * np.outer(velocities, s) / eps)
    E[:, rot.seam] = np.cos(velocities * spatial.L / (2 * eps))
    return E


def _natural_phase(op: DensityOperator) -> PhaseGrid:
    return PhaseGrid.natural(op.grid, op.eps)


def momentum_leakage(op: DensityOperator, v_max: float) -> float:
    """Fraction of ``tr omega`` carried by momenta with ``eps |p| >= v_max``."""
    occ = np.abs(np.diag(to_momentum(op.kernel, op.grid.h)))
    total = occ.sum()
    if total == 0:
        return 0.0
    outside = np.abs(op.eps * op.grid.wavenumbers) >= v_max * (1 - 1e-12)
    return float(occ[outside].sum() / total)


def wigner_transform(
    op: DensityOperator, grid: PhaseGrid | None = None, check_cutoff: bool = False, tol: float = 1e-8
) -> PhaseSpaceDensity:
    """Wigner transform of ``op`` on ``grid`` (default: the natural phase grid).

    With ``check_cutoff`` a :class:`TruncationError` is raised when more than
    ``tol`` of the trace sits at velocities the grid cannot represent.
    """
    if grid is None:
        grid = _natural_phase(op)
    if grid.spatial != op.grid:
        raise ConfigurationError("phase grid and operator use different spatial grids")
    if check_cutoff:
        leak = momentum_leakage(op, grid.v_max)
        if leak > tol:
            raise TruncationError("state exceeds the velocity cutoff", leak)
    rot = _Rotation.get(op.grid.n)
    R = rot.forward(op.kernel)
    h = op.grid.h
    if grid.is_natural_for(op.eps):
        W = (h / (2 * np.pi)) * np.fft.fft(R, axis=1)
        W = np.fft.fftshift(W, axes=1).T
    else:
        E = _velocity_matrix(op.grid, op.eps, grid.velocities)
        W = (h / (2 * np.pi)) * (E @ R.T)
    if _is_hermitian(op.kernel):
        W = W.real
    return PhaseSpaceDensity(np.ascontiguousarray(W), grid, op.eps, op.N)


def weyl_quantize(W: PhaseSpaceDensity, spatial: SpatialGrid | None = None) -> DensityOperator:
    """Inverse of :func:`wigner_transform` (exact on the natural phase grid)."""
    if spatial is not None and spatial != W.grid.spatial:
        raise ConfigurationError("target spatial grid differs from the phase grid's spatial grid")
    sg = W.grid.spatial
    h = sg.h
    vals = np.asarray(W.values, dtype=complex)
    if W.grid.is_natural_for(W.eps):
        R = (2 * np.pi / h) * np.fft.ifft(np.fft.ifftshift(vals.T, axes=1), axis=1)
    else:
        E = _velocity_matrix(sg, W.eps, W.grid.velocities)
        R = (2 * np.pi / h) * np.linalg.lstsq(E, vals, rcond=None)[0].T
    K = _Rotation.get(sg.n).inverse(R)
    if np.isrealobj(W.values):
        K = 0.5 * (K + K.conj().T)
    return DensityOperator(K, W.N, W.eps, sg)


def _is_hermitian(K: np.ndarray) -> bool:
    scale = np.abs(K).max()
    return scale == 0 or np.abs(K - K.conj().T).max() <= 1e-13 * scale


# ---------------------------------------------------------------- marginals


def density_of(op: DensityOperator) -> SpatialDensity:
    """``rho(x) = omega(x; x) / N``."""
    return SpatialDensity(np.diag(op.kernel).real / op.N, op.grid)


def velocity_marginal(W: PhaseSpaceDensity) -> SpatialDensity:
    """``rho(x) = int W(x, v) dv / (N eps)``; agrees with :func:`density_of` on Wigner transforms."""
    rho = W.grid.dv * np.sum(W.values, axis=0).real / (W.N * W.eps)
    return SpatialDensity(rho, W.grid.spatial)


# ---------------------------------------------------------------- mollification


def _gaussian_stencil(mol: Mollifier, grid: PhaseGrid) -> np.ndarray:
    x = centered_lift(grid.spatial)
    v = np.fft.fftfreq(grid.m, d=1.0 / grid.m) * grid.dv
    g = mol(x[None, :], v[:, None])
    return g / (g.sum() * grid.cell)


def mollify(W: PhaseSpaceDensity, mol: Mollifier, max_leak: float = 1e-6) -> PhaseSpaceDensity:
    """Periodic convolution with the discretized ``g_k`` (normalized to unit discrete mass)."""
    leak = mol.leakage(W.grid)
    if leak > max_leak:
        raise TruncationError(f"mollifier with k = {mol.k} does not fit the phase-space box", leak)
    g = _gaussian_stencil(mol, W.grid)
    out = np.fft.ifft2(np.fft.fft2(W.values) * np.fft.fft2(g)) * W.grid.cell
    if np.isrealobj(W.values):
        out = out.real
    return W.replace(out)


# ---------------------------------------------------------------- initial data


def _wrap(x, L):
    return (x + L / 2) % L - L / 2


def gaussian_profile(x0: float = 0.0, sigma_x: float = 0.25, v0: float = 0.0, sigma_v: float = 4.0):
    """Product Gaussian centered at ``(x0, v0)`` (periodized in ``x`` by the nearest image)."""

    def W0(x, v, L):
        dx = _wrap(x - x0, L)
        return np.exp(-0.5 * (dx / sigma_x) ** 2 - 0.5 * ((v - v0) / sigma_v) ** 2) / (2 * np.pi * sigma_x * sigma_v)

    return W0


def cosine_profile(amplitude: float = 0.3, mode: int = 1, sigma_v: float = 2.0, v0: float = 0.0):
    """``(1 + a cos(2 pi mode x / L)) / L`` times a Maxwellian in ``v``."""

    def W0(x, v, L):
        spatial = (1 + amplitude * np.cos(2 * np.pi * mode * x / L)) / L
        return spatial * np.exp(-0.5 * ((v - v0) / sigma_v) ** 2) / (np.sqrt(2 * np.pi) * sigma_v)

    return W0


PROFILES: dict[str, Callable] = {"gaussian": gaussian_profile, "cosine": cosine_profile}


class InitialState(NamedTuple):
    op: DensityOperator
    wigner: PhaseSpaceDensity
    report: dict


def _water_fill(lam: np.ndarray, target: float) -> np.ndarray:
    """Eigenvalues clipped into [0, 1] and shifted uniformly so they sum to ``target``."""
    lo, hi = -1.0 - lam.max(), 1.0 - lam.min()
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.clip(lam + mid, 0, 1).sum() < target:
            lo = mid
        else:
            hi = mid
    return np.clip(lam + 0.5 * (lo + hi), 0, 1)


def build_initial_state(
    profile: str | Callable,
    N: float,
    eps: float,
    grid: SpatialGrid,
    params: Mapping | None = None,
    max_clip: float = 0.05,
    commutators: bool = True,
) -> InitialState:
    """Fermionic initial data ``omega_N`` from a phase-space profile, and its Wigner transform.

    The profile (a name in :data:`PROFILES` or a callable ``W0(x, v, L)`` with unit
    mass) is sampled on the natural phase grid, Weyl-quantized with weight
    ``N eps``, and its spectrum is clipped into ``[0, 1]`` with a uniform shift
    that restores ``tr omega_N = N``.  The returned ``wigner`` is the transform of
    the clipped operator, not the input profile.
    """
    if callable(profile):
        W0 = profile
        name = getattr(profile, "__name__", "custom")
    else:
        if profile not in PROFILES:
            raise ConfigurationError(f"unknown profile {profile!r}; known: {sorted(PROFILES)}")
        W0 = PROFILES[profile](**dict(params or {}))
        name = profile
    phase = PhaseGrid.natural(grid, eps)
    X, V = phase.mesh()
    samples = np.asarray(W0(X, V, grid.L), dtype=float)
    raw = weyl_quantize(PhaseSpaceDensity(N * eps * samples, phase, eps, N))

    lam, U = np.linalg.eigh(raw.matrix)
    if lam.min() >= 0 and lam.max() <= 1:
        new = lam * (N / lam.sum())
        if new.max() > 1:
            new = _water_fill(lam, N)
    else:
        new = _water_fill(lam, N)
    clip = float(np.abs(new - lam).sum())
    if clip > max_clip * N:
        raise ProfileRejected(
            f"profile {name!r} needs spectral clipping of {clip:.3g} > {max_clip} * N; not semiclassical"
        )
    K = (U * new) @ U.conj().T / grid.h
    K = 0.5 * (K + K.conj().T)
    op = DensityOperator(K, N, eps, grid)
    W = wigner_transform(op)
    report = {
        "profile": name,
        "clip_magnitude": clip,
        "raw_trace": float(lam.sum()),
        "velocity_leakage": momentum_leakage(op, phase.v_max * 0.75),
    }
    if commutators:
        from .metrics import commutator_norms

        report["commutators"] = commutator_norms(op)
    return InitialState(op, W, report)
