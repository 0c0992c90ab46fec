"""Relativistic Vlasov equation ``dW/dt + u(v) dW/dx + F(x) dW/dv = 0``.

``u(v) = v / sqrt(1 + v^2)`` and ``F = -grad(V * rho)`` with ``rho = int W dv / (N eps)``.

The solver is semi-Lagrangian with Strang splitting.  Each substep is a shift
along one axis by an amount that is constant on lines (``x``-shifts depend only
on ``v``, ``v``-shifts only on ``x``), so interpolation reduces to multiplying
line spectra by a transfer function: exact phase factors for band-limited
``x`` shifts, cubic B-spline transfer functions otherwise.  Both preserve the
line sums, hence mass, exactly.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage

from .errors import BlowUpError, ConfigurationError
from .grid import PhaseGrid, SpatialGrid
from .hartree import time_grid
from .states import InteractionPotential, PhaseSpaceDensity, SpatialDensity, velocity_marginal

log = logging.getLogger(__name__)

__all__ = [
    "VlasovConfig",
    "VlasovTrajectory",
    "CharacteristicFlow",
    "relativistic_velocity",
    "mean_field_force",
    "vlasov_step",
    "evolve_vlasov",
    "integrate_characteristics",
    "flow_derivative_probe",
    "sample_density",
]

INTERPOLATIONS = ("fourier_x_cubic_v", "cubic_both")
FORCE_UPDATES = ("per_step", "per_substep")
UNDERSHOOT_TOL = 1e-6


def relativistic_velocity(v):
    return np.asarray(v) / np.sqrt(1.0 + np.asarray(v) ** 2)


def mean_field_force(rho: SpatialDensity, V: InteractionPotential) -> np.ndarray:
    """``-grad(V * rho)`` on the spatial grid (Fourier multiplication)."""
    g = rho.grid
    if V.is_zero:
        return np.zeros(g.n)
    mult = -1j * g.wavenumbers * g.L * V.coefficients_on(g)
    mult[g.nyquist_index] = 0
    return np.fft.ifft(mult * np.fft.fft(rho.rho)).real


def _force_modes(rho: SpatialDensity, V: InteractionPotential) -> dict[int, complex]:
    """Fourier modes ``{k: b_k}`` of the force, ``F(x) = sum_k b_k exp(2 pi i k x / L)``."""
    g = rho.grid
    return {k: -1j * (2 * np.pi * k / g.L) * a for k, a in V.mean_field_modes(rho.rho, g).items() if k != 0}


def _eval_modes(modes: dict[int, complex], L: float, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for k, b in modes.items():
        out = out + (b * np.exp(2j * np.pi * k * x / L)).real
    return out


@dataclass(frozen=True)
class VlasovConfig:
    dt: float
    interpolation: str = "fourier_x_cubic_v"
    force_update: str = "per_step"
    snapshot_every: float | None = None
    clip_undershoot: bool = False

    def __post_init__(self):
        if not self.dt >= 0:
            raise ConfigurationError("dt must be non-negative")
        if self.interpolation not in INTERPOLATIONS:
            raise ConfigurationError(f"interpolation must be one of {INTERPOLATIONS}")
        if self.force_update not in FORCE_UPDATES:
            raise ConfigurationError(f"force_update must be one of {FORCE_UPDATES}")

    def check(self, grid: PhaseGrid) -> None:
        umax = float(np.abs(relativistic_velocity(grid.velocities)).max())
        if self.dt * umax > 0.5 * grid.spatial.h * (1 + 1e-12):
            raise ConfigurationError(
                f"dt * max|u| = {self.dt * umax:.3g} exceeds half a cell ({0.5 * grid.spatial.h:.3g})"
            )


# ---------------------------------------------------------------- line shifts


def _bspline3(t: np.ndarray) -> np.ndarray:
    a = np.abs(t)
    return np.where(a < 1, 2 / 3 - a**2 + a**3 / 2, np.where(a < 2, (2 - a) ** 3 / 6, 0.0))


def _cubic_transfer(delta: np.ndarray, size: int) -> np.ndarray:
    """Transfer functions of ``f -> f(. - delta)`` for periodic cubic spline interpolation.

    ``delta`` is in cells, one value per line; returns ``(lines, size)`` in FFT order.
    """
    k = 2 * np.pi * np.fft.fftfreq(size)
    base = np.floor(delta)
    out = np.zeros((delta.size, size), dtype=complex)
    for tap in (-1, 0, 1, 2):
        # interpolant at a - delta = sum_j c_j b(a - delta - j); lag l = a - j
        lag = base + tap
        w = _bspline3(lag - delta)
        out += w[:, None] * np.exp(-1j * np.outer(lag, k))
    b0 = (4 + 2 * np.cos(k)) / 6
    return out / b0[None, :]


def _shift_x(W: np.ndarray, grid: PhaseGrid, shift: np.ndarray, method: str) -> np.ndarray:
    """``W(x - shift[a], v_a)`` for each velocity row ``a``."""
    sg = grid.spatial
    if method == "fourier_x_cubic_v":
        mult = np.exp(-1j * np.outer(shift, sg.wavenumbers))
    else:
        mult = _cubic_transfer(shift / sg.h, sg.n)
    out = np.fft.ifft(np.fft.fft(W, axis=1) * mult, axis=1)
    return out.real if np.isrealobj(W) else out


def _shift_v(W: np.ndarray, grid: PhaseGrid, shift: np.ndarray) -> np.ndarray:
    """``W(x_i, v - shift[i])`` for each spatial column ``i`` (cubic, periodic in ``v``)."""
    mult = _cubic_transfer(shift / grid.dv, grid.m).T
    out = np.fft.ifft(np.fft.fft(W, axis=0) * mult, axis=0)
    return out.real if np.isrealobj(W) else out


# ---------------------------------------------------------------- stepping


def _density(W: np.ndarray, grid: PhaseGrid, N: float, eps: float) -> SpatialDensity:
    return SpatialDensity(grid.dv * W.sum(axis=0).real / (N * eps), grid.spatial)


def _step_values(W: np.ndarray, dens: PhaseSpaceDensity, V, cfg: VlasovConfig, dt: float, rec: list | None):
    grid = dens.grid
    u = relativistic_velocity(grid.velocities)
    V = V if V is not None else InteractionPotential.zero(grid.spatial.L)
    if cfg.force_update == "per_step":
        W = _shift_x(W, grid, 0.5 * dt * u, cfg.interpolation)
        rho = _density(W, grid, dens.N, dens.eps)
        if rec is not None:
            rec.append(_force_modes(rho, V))
        if not V.is_zero:
            W = _shift_v(W, grid, dt * mean_field_force(rho, V))
        W = _shift_x(W, grid, 0.5 * dt * u, cfg.interpolation)
    else:
        rho = _density(W, grid, dens.N, dens.eps)
        if not V.is_zero:
            W = _shift_v(W, grid, 0.5 * dt * mean_field_force(rho, V))
        W = _shift_x(W, grid, dt * u, cfg.interpolation)
        rho = _density(W, grid, dens.N, dens.eps)
        if rec is not None:
            rec.append(_force_modes(rho, V))
        if not V.is_zero:
            W = _shift_v(W, grid, 0.5 * dt * mean_field_force(rho, V))
    return W


def _undershoot(W: np.ndarray) -> float:
    top = float(np.abs(W).max())
    return float(max(0.0, -W.real.min()) / top) if top > 0 else 0.0


def vlasov_step(
    W: PhaseSpaceDensity, V: InteractionPotential | None, cfg: VlasovConfig, dt: float | None = None
) -> PhaseSpaceDensity:
    """One Strang step.  Undershoot below ``-1e-6 max W`` is logged, or clipped if configured."""
    dt = cfg.dt if dt is None else dt
    if dt == 0:
        return W
    cfg.check(W.grid)
    out = _step_values(np.asarray(W.values), W, V, cfg, dt, None)
    if not np.all(np.isfinite(out)):
        raise BlowUpError("non-finite phase-space density in Vlasov step", 0)
    out, _ = _handle_undershoot(out, cfg)
    return W.replace(out)


def _handle_undershoot(W: np.ndarray, cfg: VlasovConfig) -> tuple[np.ndarray, float]:
    under = _undershoot(W)
    if under > UNDERSHOOT_TOL:
        if cfg.clip_undershoot:
            mass = W.sum()
            W = np.maximum(W.real, 0.0)
            W *= mass.real / W.sum()
            log.info("clipped Vlasov undershoot %.2e", under)
        else:
            log.warning("Vlasov undershoot %.2e exceeds %.0e of max W", under, UNDERSHOOT_TOL)
    return W, under


@dataclass
class VlasovTrajectory:
    times: list
    snapshots: list
    conserved: list
    dt: float
    force_modes: list = field(default_factory=list)  # per step, force modes at the step midpoint

    def __len__(self):
        return len(self.snapshots)

    def at(self, t: float, tol: float = 1e-9) -> PhaseSpaceDensity:
        for s, W in zip(self.times, self.snapshots):
            if abs(s - t) <= tol:
                return W
        raise KeyError(f"no snapshot at t = {t}")


def _conserved(W: PhaseSpaceDensity, t: float, under: float) -> dict:
    return {"t": t, "mass": W.mass, "l2": W.l2_norm(), "undershoot": under}


def evolve_vlasov(
    W0: PhaseSpaceDensity,
    V: InteractionPotential | None,
    cfg: VlasovConfig,
    t_final: float,
    callback: Callable | None = None,
) -> VlasovTrajectory:
    """Integrate to ``t_final``; snapshot times follow the same rule as the Hartree solver."""
    steps, dt, per = time_grid(t_final, cfg.dt, cfg.snapshot_every)
    if steps:
        VlasovConfig(dt, cfg.interpolation, cfg.force_update).check(W0.grid)
    traj = VlasovTrajectory([0.0], [W0], [_conserved(W0, 0.0, _undershoot(np.asarray(W0.values)))], dt)
    W = np.asarray(W0.values)
    for step in range(1, steps + 1):
        W = _step_values(W, W0, V, cfg, dt, traj.force_modes)
        if not np.all(np.isfinite(W[:, :: max(1, W.shape[1] // 16)])):
            raise BlowUpError("non-finite phase-space density in Vlasov evolution", step)
        if step % per == 0:
            W, under = _handle_undershoot(W, cfg)
            t = step * dt
            snap = W0.replace(W.copy())
            traj.times.append(t)
            traj.snapshots.append(snap)
            traj.conserved.append(_conserved(snap, t, under))
            if callback is not None:
                callback(t, snap)
    return traj


# ---------------------------------------------------------------- characteristics


@dataclass
class CharacteristicFlow:
    """``X_t(x, v)``, ``V_t(x, v)`` at the stored times; ``X_lift`` is the unwrapped position."""

    times: np.ndarray
    X_lift: np.ndarray  # (time, *points)
    V: np.ndarray
    length: float
    grid: PhaseGrid | None = None

    @property
    def X(self) -> np.ndarray:
        return np.mod(self.X_lift, self.length)


def _frozen_force(force, spatial: SpatialGrid | None) -> Callable:
    if callable(force):
        return lambda t, x: np.asarray(force(x), dtype=float)
    arr = np.asarray(force, dtype=float)
    if spatial is None:
        raise ConfigurationError("a force given on grid nodes needs the spatial grid")
    spatial.check(arr)
    coef = np.fft.fft(arr) / spatial.n
    ks = np.rint(np.fft.fftfreq(spatial.n, d=1.0 / spatial.n)).astype(int)
    modes = {int(k): c for k, c in zip(ks, coef) if abs(c) > 1e-15 * (np.abs(coef).max() + 1e-300)}
    modes = {k: (c if k != -spatial.n // 2 else c.real) for k, c in modes.items()}
    return lambda t, x: _eval_modes(modes, spatial.L, x)


def integrate_characteristics(
    source,
    t_final: float,
    dt: float,
    V: InteractionPotential | None = None,
    points: tuple[np.ndarray, np.ndarray] | None = None,
    snapshot_every: float | None = None,
    vlasov_cfg: VlasovConfig | None = None,
) -> CharacteristicFlow:
    """RK4 for ``X' = u(V)``, ``V' = F(t, X)``.

    ``source`` is a :class:`PhaseSpaceDensity` (self-consistent force: the Vlasov
    solver is run alongside with step ``dt`` and its mean field is evaluated
    exactly at the RK4 stage times), a callable ``F(x)``, an array of force values
    on a spatial grid, or ``None`` for free streaming.  ``points`` defaults to all
    phase-grid nodes when ``source`` is a density.
    """
    grid = source.grid if isinstance(source, PhaseSpaceDensity) else None
    if points is None:
        if grid is None:
            raise ConfigurationError("points are required when no phase grid is given")
        points = grid.mesh()
    x0 = np.array(points[0], dtype=float)
    v0 = np.array(points[1], dtype=float)
    if x0.shape != v0.shape:
        raise ConfigurationError("x and v point arrays differ in shape")

    if t_final == 0 or dt == 0:
        steps, h, per = 0, dt, 1
    else:
        steps, h, per = time_grid(abs(t_final), dt, snapshot_every)
    sign = 1.0 if t_final >= 0 else -1.0
    h *= sign

    if isinstance(source, PhaseSpaceDensity):
        if sign < 0:
            raise ConfigurationError("self-consistent characteristics run forward in time only")
        L = source.grid.spatial.L
        modes_at = _self_consistent_modes(source, V, abs(t_final), abs(h), vlasov_cfg)
        force = lambda s, x: _eval_modes(modes_at(s), L, x)
    elif source is None:
        L = None
        force = lambda s, x: np.zeros_like(x)
    else:
        spatial = getattr(source, "grid", None)
        force = _frozen_force(source, spatial)
        L = None

    times, Xs, Vs = [0.0], [x0.copy()], [v0.copy()]
    X, Vv = x0, v0
    for step in range(1, steps + 1):
        t = (step - 1) * h
        k1x, k1v = relativistic_velocity(Vv), force(t, X)
        k2x, k2v = relativistic_velocity(Vv + 0.5 * h * k1v), force(t + 0.5 * h, X + 0.5 * h * k1x)
        k3x, k3v = relativistic_velocity(Vv + 0.5 * h * k2v), force(t + 0.5 * h, X + 0.5 * h * k2x)
        k4x, k4v = relativistic_velocity(Vv + h * k3v), force(t + h, X + h * k3x)
        X = X + h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
        Vv = Vv + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Vv))):
            raise BlowUpError("non-finite characteristic", step)
        if step % per == 0:
            times.append(step * h)
            Xs.append(X.copy())
            Vs.append(Vv.copy())
    length = L if L is not None else np.inf
    return CharacteristicFlow(np.array(times), np.array(Xs), np.array(Vs), length, grid)


def _self_consistent_modes(W0: PhaseSpaceDensity, V, t_final: float, dt: float, cfg: VlasovConfig | None):
    """Force modes at every multiple of ``dt / 2`` along a Vlasov run."""
    V = V if V is not None else InteractionPotential.zero(W0.grid.spatial.L)
    steps = int(round(t_final / dt)) if dt > 0 else 0
    cfg = VlasovConfig(dt, force_update="per_step") if cfg is None else VlasovConfig(dt, cfg.interpolation, "per_step")
    table = {0: _force_modes(velocity_marginal(W0), V)}
    W = np.asarray(W0.values)
    for step in range(1, steps + 1):
        rec: list = []
        W = _step_values(W, W0, V, cfg, dt, rec)
        table[2 * step - 1] = rec[0]
        table[2 * step] = _force_modes(_density(W, W0.grid, W0.N, W0.eps), V)

    def modes_at(s: float) -> dict:
        key = int(round(2 * s / dt)) if dt > 0 else 0
        return table[key]

    return modes_at


def flow_derivative_probe(flow: CharacteristicFlow, interior: float = 0.9) -> np.ndarray:
    """Per stored time: ``sup |dX/dx| + |dX/dv| + |dV/dx| + |dV/dv|`` by centered differences.

    Needs a flow over the full phase grid.  ``x`` differences wrap periodically on
    the lifted positions; the sup is taken over velocities within ``interior * v_max``.
    """
    grid = flow.grid
    if grid is None or flow.X_lift.shape[1:] != (grid.m, grid.spatial.n):
        raise ConfigurationError("flow_derivative_probe needs a flow on the full phase grid")
    h, dv, L = grid.spatial.h, grid.dv, grid.spatial.L

    def dx(F, periodic_shift):
        fwd = np.roll(F, -1, axis=-1)
        bwd = np.roll(F, 1, axis=-1)
        fwd[..., -1] += periodic_shift
        bwd[..., 0] -= periodic_shift
        return (fwd - bwd) / (2 * h)

    dXdx = dx(flow.X_lift, L)
    dVdx = dx(flow.V, 0.0)
    dXdv = np.gradient(flow.X_lift, dv, axis=1)
    dVdv = np.gradient(flow.V, dv, axis=1)
    total = np.abs(dXdx) + np.abs(dXdv) + np.abs(dVdx) + np.abs(dVdv)
    keep = np.abs(grid.velocities) <= interior * grid.v_max
    return total[:, keep, :].reshape(total.shape[0], -1).max(axis=1)


def sample_density(W: PhaseSpaceDensity, x, v) -> np.ndarray:
    """Cubic-spline evaluation of ``W`` at arbitrary points (periodic in ``x``)."""
    grid = W.grid
    ci = np.asarray(x) / grid.spatial.h
    ca = (np.asarray(v) + grid.v_max) / grid.dv
    coords = np.stack([np.ravel(ca), np.ravel(ci)])
    vals = ndimage.map_coordinates(np.asarray(W.values).real, coords, order=3, mode="grid-wrap")
    return vals.reshape(np.shape(x))
