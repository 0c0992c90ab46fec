"""Residual operators comparing the quantum and classical generators.

In the plane-wave basis the kinetic commutator ``[sqrt(1 - eps^2 Delta), omega]``
has kernel ``(E(p) - E(q)) omega(p; q)`` with ``E(p) = sqrt(1 + eps^2 p^2)``.
The transport operator ``A`` replaces the difference quotient by the classical
velocity at the midpoint momentum ``v = eps (p + q) / 2``::

    A(p; q) = eps^2 (p - q)(p + q) / (2 sqrt(1 + eps^2 (p + q)^2 / 4)) omega(p; q)

and the kinetic symbol ``F = E(p) - E(q) - eps^2 (p - q)(p + q) / (2 E((p + q)/2))``
is what is left over.  ``C`` is the Taylor remainder of the mean-field commutator
around the midpoint ``(x + y) / 2``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError
from .grid import centered_displacement
from .states import (
    DensityOperator,
    InteractionPotential,
    PhaseSpaceDensity,
    from_momentum,
    to_momentum,
    velocity_marginal,
    weyl_quantize,
    wigner_transform,
)
from .vlasov import mean_field_force, relativistic_velocity

__all__ = [
    "KineticSymbol",
    "kinetic_symbol",
    "symbol_bound_check",
    "transport_operator_A",
    "kinetic_commutator",
    "kinetic_residual",
    "remainder_operator_C",
    "vlasov_rhs",
    "wigner_evolution_residual",
    "ResidualReport",
]


def _energy(u):
    return np.sqrt(1.0 + np.square(u))


def kinetic_symbol(p, q, eps: float):
    """``F(p; q)``, written so that ``F(p; p) = 0`` and ``F(p; q) = -F(q; p)`` hold exactly.

    Uses ``E(p) - E(q) = eps^2 (p - q)(p + q) / (E(p) + E(q))``, which also avoids
    cancellation for nearby arguments.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    u, w = eps * p, eps * q
    bracket = 1.0 / (_energy(u) + _energy(w)) - 0.5 / _energy(0.5 * (u + w))
    return (u - w) * (u + w) * bracket


@dataclass(frozen=True)
class KineticSymbol:
    eps: float

    def __call__(self, p, q):
        return kinetic_symbol(p, q, self.eps)

    def dispersion(self, p):
        return _energy(self.eps * np.asarray(p, dtype=float))

    def transport(self, p, q):
        """The ``A`` multiplier ``eps^2 (p - q)(p + q) / (2 E((p + q)/2))``."""
        u, w = self.eps * np.asarray(p, dtype=float), self.eps * np.asarray(q, dtype=float)
        return (u - w) * (u + w) / (2 * _energy(0.5 * (u + w)))


# ---------------------------------------------------------------- symbol bounds


def symbol_bound_check(
    eps: float, sample_count: int = 20000, p_max: float | None = None, seed: int = 0, step: float | None = None
) -> dict:
    """Largest ratios of ``|F|``, ``|grad_p F|``, ``|Laplace_p F|`` (each weighted by ``1 + eps^2 p^2``)
    to the envelopes::

        eps^2 |p-q|^2 (1 + eps^2 |p+q|^2)^(1/2) + eps^4 |p-q|^4
        eps^2 |p-q|   (1 + eps^2 |p+q|^2)^(1/2) + eps^5 |p-q|^4
        eps^2         (1 + eps^2 |p+q|^2)^(1/2) + eps^6 |p-q|^4

    Momenta are drawn uniformly from ``[-p_max, p_max]`` (default: the momentum
    range of a grid with ``h = eps / 4``).  Derivatives are centered differences
    with step ``step`` (default ``1e-3 / eps``).
    """
    report = {"eps": eps, "samples": 0, "ratios": {}, "medians": {}, "pass": True}
    if eps == 0:
        report["note"] = "F vanishes identically at eps = 0"
        return report
    p_max = 4 * np.pi / eps if p_max is None else p_max
    rng = np.random.default_rng(seed)
    p = rng.uniform(-p_max, p_max, sample_count)
    q = rng.uniform(-p_max, p_max, sample_count)
    keep = np.abs(p - q) > 1e-9 * p_max
    p, q = p[keep], q[keep]
    d = 1e-3 / eps if step is None else step

    F = kinetic_symbol(p, q, eps)
    dF = (kinetic_symbol(p + d, q, eps) - kinetic_symbol(p - d, q, eps)) / (2 * d)
    lF = (kinetic_symbol(p + d, q, eps) - 2 * F + kinetic_symbol(p - d, q, eps)) / d**2

    a = np.abs(p - q)
    s = np.sqrt(1 + eps**2 * (p + q) ** 2)
    wgt = 1 + (eps * p) ** 2
    envelopes = {
        "F": eps**2 * a**2 * s + eps**4 * a**4,
        "grad_F": eps**2 * a * s + eps**5 * a**4,
        "laplace_F": eps**2 * s + eps**6 * a**4,
    }
    values = {"F": F, "grad_F": dF, "laplace_F": lF}
    for name, env in envelopes.items():
        r = wgt * np.abs(values[name]) / env
        report["ratios"][name] = float(r.max())
        report["medians"][name] = float(np.median(r))
    report["samples"] = int(p.size)
    report["pass"] = all(math.isfinite(v) and v < 10 for v in report["ratios"].values())
    return report


# ---------------------------------------------------------------- A and the kinetic residual


def _as_operator(x) -> DensityOperator:
    if isinstance(x, DensityOperator):
        return x
    if isinstance(x, PhaseSpaceDensity):
        return weyl_quantize(x)
    raise ConfigurationError("expected a DensityOperator or a PhaseSpaceDensity")


def _momentum_pairs(op: DensityOperator) -> tuple[np.ndarray, np.ndarray]:
    p = op.grid.wavenumbers
    return p[:, None], p[None, :]


def _apply_symbol(op: DensityOperator, symbol: np.ndarray) -> np.ndarray:
    h = op.grid.h
    return from_momentum(symbol * to_momentum(op.kernel, h), h)


def transport_operator_A(x) -> np.ndarray:
    """Kernel of ``A``: momentum-space multiplication of ``omega`` by the transport symbol."""
    op = _as_operator(x)
    P, Q = _momentum_pairs(op)
    return _apply_symbol(op, KineticSymbol(op.eps).transport(P, Q))


def kinetic_commutator(x) -> np.ndarray:
    """Kernel of ``[sqrt(1 - eps^2 Delta), omega]``."""
    op = _as_operator(x)
    P, Q = _momentum_pairs(op)
    E = KineticSymbol(op.eps).dispersion
    return _apply_symbol(op, E(P) - E(Q))


def kinetic_residual(x) -> np.ndarray:
    """Kernel of ``[sqrt(1 - eps^2 Delta), omega] - A`` (multiplication by ``F``)."""
    op = _as_operator(x)
    P, Q = _momentum_pairs(op)
    return _apply_symbol(op, kinetic_symbol(P, Q, op.eps))


# ---------------------------------------------------------------- C


def remainder_operator_C(W: PhaseSpaceDensity | DensityOperator, V: InteractionPotential) -> np.ndarray:
    """Kernel ``[U(x) - U(y) - U'((x+y)/2) d(x, y)] omega(x; y)`` with ``U = V * rho``.

    ``d`` is the displacement wrapped into ``(-L/2, L/2]`` and the midpoint is
    ``y + d/2``.  At ``|d| = L/2`` the midpoint is ambiguous; the linear term is
    dropped there so the prefactor stays antisymmetric and ``C`` anti-Hermitian.
    """
    if isinstance(W, DensityOperator):
        op = W
        W = wigner_transform(op)
    else:
        op = weyl_quantize(W)
    g = op.grid
    rho = velocity_marginal(W)
    modes = V.mean_field_modes(rho.rho, g)
    x = g.nodes
    U = np.zeros(g.n)
    for k, a in modes.items():
        U += (a * np.exp(2j * np.pi * k * x / g.L)).real
    d = centered_displacement(g)
    mid = x[None, :] + 0.5 * d
    dU = np.zeros_like(mid)
    for k, a in modes.items():
        pk = 2 * np.pi * k / g.L
        dU += (1j * pk * a * np.exp(1j * pk * mid)).real
    factor = U[:, None] - U[None, :] - dU * d
    seam = np.isclose(np.abs(d), g.L / 2)
    factor[seam] = (U[:, None] - U[None, :])[seam]
    return factor * op.kernel


# ---------------------------------------------------------------- Wigner evolution residual


def _spectral_dv(W: np.ndarray, dv: float) -> np.ndarray:
    m = W.shape[0]
    k = 2 * np.pi * np.fft.fftfreq(m, d=dv)
    k[m // 2] = 0
    out = np.fft.ifft(1j * k[:, None] * np.fft.fft(W, axis=0), axis=0)
    return out.real if np.isrealobj(W) else out


def vlasov_rhs(W: PhaseSpaceDensity, V: InteractionPotential | None) -> np.ndarray:
    """``-u(v) dW/dx - F(x) dW/dv`` with the self-consistent force of ``W``."""
    grid = W.grid
    vals = np.asarray(W.values)
    sg = grid.spatial
    p = sg.wavenumbers.copy()
    p[sg.nyquist_index] = 0
    dWdx = np.fft.ifft(1j * p[None, :] * np.fft.fft(vals, axis=1), axis=1)
    if np.isrealobj(vals):
        dWdx = dWdx.real
    out = -relativistic_velocity(grid.velocities)[:, None] * dWdx
    if V is not None and not V.is_zero:
        force = mean_field_force(velocity_marginal(W), V)
        out = out - force[None, :] * _spectral_dv(vals, grid.dv)
    return out


def _snapshot_index(times, t, tol=1e-9) -> int:
    for i, s in enumerate(times):
        if abs(s - t) <= tol:
            return i
    raise ConfigurationError(f"no snapshot at t = {t}")


@dataclass
class ResidualReport:
    t: float
    eps: float
    N: float
    residual_l2: float
    time_derivative_l2: float
    relative: float
    stencil: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def wigner_evolution_residual(hartree_traj, vlasov_traj, t: float, V: InteractionPotential | None = None) -> ResidualReport:
    """``|| dW_N/dt - (Vlasov right side at W_N) ||_2`` at time ``t``.

    ``dW_N/dt`` is the centered difference of the Wigner transforms of the Hartree
    snapshots adjacent to ``t`` (one-sided at the ends).  The Vlasov trajectory,
    if given, must have a snapshot at ``t`` and the same snapshot times.
    """
    times = list(hartree_traj.times)
    if vlasov_traj is not None:
        vt = list(vlasov_traj.times)
        if len(vt) != len(times) or any(abs(a - b) > 1e-9 for a, b in zip(vt, times)):
            raise ConfigurationError("Hartree and Vlasov snapshots are not aligned")
    if len(times) < 2:
        raise ConfigurationError("at least two snapshots are needed for a time derivative")
    i = _snapshot_index(times, t)
    lo, hi = max(i - 1, 0), min(i + 1, len(times) - 1)
    Wlo = wigner_transform(hartree_traj.snapshots[lo])
    Whi = wigner_transform(hartree_traj.snapshots[hi])
    Wt = wigner_transform(hartree_traj.snapshots[i])
    dWdt = (np.asarray(Whi.values) - np.asarray(Wlo.values)) / (times[hi] - times[lo])
    res = dWdt - vlasov_rhs(Wt, V)
    r = Wt.replace(res).l2_norm()
    d = Wt.replace(dWdt).l2_norm()
    return ResidualReport(
        t=float(t),
        eps=float(Wt.eps),
        N=float(Wt.N),
        residual_l2=r,
        time_derivative_l2=d,
        relative=r / d if d > 0 else 0.0,
        stencil=float(times[hi] - times[lo]),
    )
