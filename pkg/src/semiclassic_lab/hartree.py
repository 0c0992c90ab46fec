"""Relativistic Hartree dynamics ``i eps d/dt omega = [sqrt(1 - eps^2 Delta) + V * rho, omega]``.

Time stepping is Strang splitting: half a kinetic step (diagonal in momentum),
a full potential step (diagonal in position), half a kinetic step.  Each factor
is a unitary conjugation, so trace, spectrum and Hermiticity are preserved to
round-off.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import BlowUpError, ConfigurationError
from .grid import SpatialGrid
from .states import DensityOperator, InteractionPotential, density_of

log = logging.getLogger(__name__)

__all__ = [
    "HartreeConfig",
    "Propagator",
    "HartreeTrajectory",
    "HeisenbergObservable",
    "dispersion_multiplier",
    "hartree_step",
    "evolve_hartree",
    "heisenberg_observable",
    "time_grid",
]

SELF_CONSISTENCY = ("frozen_density", "predictor_corrector")


@dataclass(frozen=True)
class HartreeConfig:
    """Stepping parameters.

    ``external_potential`` replaces ``V * rho`` by a fixed field: an array over the
    spatial grid, a callable ``U(x)``, or an :class:`InteractionPotential` whose
    Fourier series is used directly as ``U``.
    """

    dt: float
    self_consistency: str = "predictor_corrector"
    external_potential: object = None
    snapshot_every: float | None = None

    def __post_init__(self):
        if not self.dt >= 0:
            raise ConfigurationError("dt must be non-negative")
        if self.self_consistency not in SELF_CONSISTENCY:
            raise ConfigurationError(f"self_consistency must be one of {SELF_CONSISTENCY}")

    def check(self, eps: float) -> None:
        if self.dt > 0.1 * eps * (1 + 1e-12):
            raise ConfigurationError(f"dt = {self.dt} exceeds 0.1 * eps = {0.1 * eps}")


def dispersion_multiplier(grid: SpatialGrid, eps: float) -> np.ndarray:
    """``sqrt(1 + eps^2 p^2)`` over the sorted momentum nodes."""
    return np.sqrt(1.0 + (eps * grid.momentum_nodes) ** 2)


def _kinetic_phase(grid: SpatialGrid, eps: float, tau: float) -> np.ndarray:
    """``exp(-i tau sqrt(1 + eps^2 p^2) / eps)`` in FFT order."""
    energy = np.sqrt(1.0 + (eps * grid.wavenumbers) ** 2)
    return np.exp(-1j * tau * energy / eps)


def _apply_diag_momentum(phase: np.ndarray, psi: np.ndarray) -> np.ndarray:
    shape = (-1,) + (1,) * (psi.ndim - 1)
    return np.fft.ifft(phase.reshape(shape) * np.fft.fft(psi, axis=0), axis=0)


def _conjugate_kinetic(K: np.ndarray, phase: np.ndarray) -> np.ndarray:
    """``e^{-i tau T/eps} K e^{+i tau T/eps}`` for a kernel ``K``."""
    Kh = np.fft.ifft(np.fft.fft(K, axis=0), axis=1)
    Kh *= phase[:, None]
    Kh *= phase.conj()[None, :]
    return np.fft.fft(np.fft.ifft(Kh, axis=0), axis=1)


def _potential_field(op: DensityOperator, cfg: HartreeConfig, V: InteractionPotential | None) -> np.ndarray:
    ext = cfg.external_potential
    grid = op.grid
    if ext is not None:
        if isinstance(ext, InteractionPotential):
            return ext.values_on(grid)
        if callable(ext):
            return np.asarray(ext(grid.nodes), dtype=float)
        return grid.check(np.asarray(ext, dtype=float))
    if V is None or V.is_zero:
        return np.zeros(grid.n)
    return V.convolve(density_of(op).rho, grid)


def _step_kernel(
    K: np.ndarray, op: DensityOperator, cfg: HartreeConfig, V, dt: float, half: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    if cfg.self_consistency == "frozen_density":
        U = _potential_field(op.replace(K), cfg, V)
        K = _conjugate_kinetic(K, half)
    else:
        K = _conjugate_kinetic(K, half)
        U = _potential_field(op.replace(K), cfg, V)
    ph = np.exp(-1j * dt * U / op.eps)
    K = K * ph[:, None] * ph.conj()[None, :]
    K = _conjugate_kinetic(K, half)
    return K, U


def hartree_step(
    op: DensityOperator, cfg: HartreeConfig, V: InteractionPotential | None = None, dt: float | None = None
) -> DensityOperator:
    """One Strang step of length ``dt`` (default ``cfg.dt``)."""
    dt = cfg.dt if dt is None else dt
    cfg.check(op.eps)
    if dt == 0:
        return op
    half = _kinetic_phase(op.grid, op.eps, dt / 2)
    K, _ = _step_kernel(op.kernel, op, cfg, V, dt, half)
    if not np.all(np.isfinite(K)):
        raise BlowUpError("non-finite kernel in Hartree step", 0)
    return op.replace(K)


@dataclass
class Propagator:
    """Discrete ``U(t1; t0)``: the product of the Strang factors used along a run."""

    t0: float
    t1: float
    grid: SpatialGrid
    eps: float
    dt: float
    potentials: list = field(default_factory=list)  # one array U(x) per step

    def __post_init__(self):
        self._half = _kinetic_phase(self.grid, self.eps, self.dt / 2)

    @property
    def kinetic_factor(self) -> np.ndarray:
        return self._half

    def potential_factor(self, step: int) -> np.ndarray:
        return np.exp(-1j * self.dt * self.potentials[step] / self.eps)

    def window(self, start: int, stop: int) -> "Propagator":
        """The propagator over steps ``start:stop``."""
        return Propagator(
            self.t0 + start * self.dt, self.t0 + stop * self.dt, self.grid, self.eps, self.dt, self.potentials[start:stop]
        )

    def apply(self, psi: np.ndarray) -> np.ndarray:
        """``U psi`` for vectors (or matrices acted on along axis 0)."""
        psi = np.asarray(psi, dtype=complex)
        shape = (-1,) + (1,) * (psi.ndim - 1)
        for k in range(len(self.potentials)):
            psi = _apply_diag_momentum(self._half, psi)
            psi = self.potential_factor(k).reshape(shape) * psi
            psi = _apply_diag_momentum(self._half, psi)
        return psi

    def apply_adjoint(self, psi: np.ndarray) -> np.ndarray:
        psi = np.asarray(psi, dtype=complex)
        shape = (-1,) + (1,) * (psi.ndim - 1)
        half = self._half.conj()
        for k in reversed(range(len(self.potentials))):
            psi = _apply_diag_momentum(half, psi)
            psi = self.potential_factor(k).conj().reshape(shape) * psi
            psi = _apply_diag_momentum(half, psi)
        return psi

    def conjugate(self, K: np.ndarray) -> np.ndarray:
        """Kernel of ``U omega U^*``."""
        return self.apply(self.apply(K).conj().T).conj().T


@dataclass
class HartreeTrajectory:
    times: list
    snapshots: list
    conserved: list
    propagator: Propagator

    def __len__(self):
        return len(self.snapshots)

    def at(self, t: float, tol: float = 1e-9) -> DensityOperator:
        for s, op in zip(self.times, self.snapshots):
            if abs(s - t) <= tol:
                return op
        raise KeyError(f"no snapshot at t = {t}")


def time_grid(t_final: float, dt: float, snapshot_every: float | None) -> tuple[int, float, int]:
    """``(steps, dt_eff, steps_per_snapshot)`` with snapshots landing exactly on step boundaries."""
    if t_final < 0:
        raise ConfigurationError("t_final must be non-negative")
    if t_final == 0:
        return 0, dt, 1
    interval = t_final if snapshot_every is None else snapshot_every
    n_snap = t_final / interval
    if abs(n_snap - round(n_snap)) > 1e-9:
        raise ConfigurationError(f"t_final = {t_final} is not a multiple of the snapshot interval {interval}")
    per = max(1, math.ceil(interval / dt - 1e-9))
    return int(round(n_snap)) * per, interval / per, per


def _conserved(op: DensityOperator, t: float) -> dict:
    K = op.kernel
    return {
        "t": t,
        "trace": op.trace,
        "hs_norm": float(op.grid.h * np.linalg.norm(K)),
        "hermiticity": float(np.abs(K - K.conj().T).max()),
    }


def evolve_hartree(
    op: DensityOperator,
    V: InteractionPotential | None,
    cfg: HartreeConfig,
    t_final: float,
    callback: Callable | None = None,
) -> HartreeTrajectory:
    """Integrate to ``t_final`` recording snapshots every ``cfg.snapshot_every``.

    The step is shrunk (never enlarged) so snapshots fall on step boundaries.
    """
    cfg.check(op.eps)
    steps, dt, per = time_grid(t_final, cfg.dt, cfg.snapshot_every)
    prop = Propagator(0.0, t_final, op.grid, op.eps, dt)
    times, snaps, cons = [0.0], [op], [_conserved(op, 0.0)]
    K = op.kernel
    half = _kinetic_phase(op.grid, op.eps, dt / 2)
    for step in range(1, steps + 1):
        K, U = _step_kernel(K, op, cfg, V, dt, half)
        prop.potentials.append(U)
        if not np.all(np.isfinite(K[:: max(1, op.grid.n // 16)])):
            raise BlowUpError("non-finite kernel in Hartree evolution", step)
        if step % per == 0:
            t = step * dt
            snap = op.replace(K)
            times.append(t)
            snaps.append(snap)
            cons.append(_conserved(snap, t))
            if callback is not None:
                callback(t, snap)
    if steps:
        log.debug("hartree: %d steps of %.3g, trace drift %.2e", steps, dt, cons[-1]["trace"] - cons[0]["trace"])
    return HartreeTrajectory(times, snaps, cons, prop)


class HeisenbergObservable:
    """``U^*(t;s) exp(i p x + q eps d/dx) U(t;s)`` acting on kernels from the left.

    The Weyl operator acts as ``f(x) -> exp(i p (x + eps q / 2)) f(x + eps q)``:
    an exact grid shift and a periodic phase (splitting the phase into two halves
    around the shift is not periodic for odd lattice ``p``).  Off-lattice ``(p, q)`` are snapped to the
    nearest admissible point (``p`` a multiple of ``2 pi / L``, ``eps q`` a
    multiple of ``h``); ``strict`` rejects them instead.
    """

    def __init__(self, prop: Propagator | None, grid: SpatialGrid, eps: float, p: float, q: float, strict=False):
        dp = 2 * np.pi / grid.L
        jp = round(p / dp)
        mq = round(eps * q / grid.h)
        p_s, q_s = jp * dp, mq * grid.h / eps
        self.snap_distance = float(math.hypot(p - p_s, q - q_s))
        if strict and self.snap_distance > 1e-9 * (1 + abs(p) + abs(q)):
            raise ConfigurationError(f"(p, q) = ({p}, {q}) is off the admissible lattice")
        self.p, self.q, self.shift = p_s, q_s, int(mq)
        self.prop, self.grid, self.eps = prop, grid, eps
        self._phase = np.exp(1j * p_s * (grid.nodes + 0.5 * mq * grid.h))

    def weyl_operator(self, psi: np.ndarray) -> np.ndarray:
        shape = (-1,) + (1,) * (psi.ndim - 1)
        return self._phase.reshape(shape) * np.roll(psi, -self.shift, axis=0)

    def __call__(self, K: np.ndarray) -> np.ndarray:
        out = np.asarray(K, dtype=complex)
        if self.prop is not None:
            out = self.prop.apply(out)
        out = self.weyl_operator(out)
        if self.prop is not None:
            out = self.prop.apply_adjoint(out)
        return out

    def trace_against(self, op: DensityOperator) -> complex:
        """``tr(O omega)``."""
        return complex(op.grid.h * np.trace(self(op.kernel)))


def heisenberg_observable(
    prop: Propagator | None, p: float, q: float, grid: SpatialGrid | None = None, eps: float | None = None, strict=False
) -> HeisenbergObservable:
    if prop is not None:
        grid = prop.grid if grid is None else grid
        eps = prop.eps if eps is None else eps
    if grid is None or eps is None:
        raise ConfigurationError("grid and eps are required without a propagator")
    return HeisenbergObservable(prop, grid, eps, p, q, strict)
