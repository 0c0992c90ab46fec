"""Norms and distances: trace, Hilbert-Schmidt, weighted Sobolev, commutators, observables.

Kernel arguments may be a :class:`DensityOperator` or a raw ``n x n`` array plus
the grid spacing ``h``.  The operator is ``h * K`` throughout.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericalError
from .grid import PhaseGrid, SpatialGrid, centered_displacement, centered_lift
from .states import DensityOperator, PhaseSpaceDensity, to_momentum, wigner_transform, weyl_quantize

__all__ = [
    "NormReport",
    "trace_norm",
    "hs_norm",
    "sobolev_norm",
    "commutator_norms",
    "observable_distance",
    "observable_transform",
    "wigner_distance",
    "norm_report",
    "DEFAULT_BOX",
]

DEFAULT_BOX = (8, 8)
SOBOLEV_WEIGHTS = (0, 1, 2, 4)


def _kernel(op, h: float | None) -> tuple[np.ndarray, float]:
    if isinstance(op, DensityOperator):
        return op.kernel, op.grid.h
    if h is None:
        raise ConfigurationError("grid spacing h is required for a raw kernel")
    return np.asarray(op), float(h)


def trace_norm(op, h: float | None = None) -> float:
    """``tr |h K|``: ``h`` times the sum of singular values of ``K``."""
    K, h = _kernel(op, h)
    if not np.all(np.isfinite(K)):
        raise NumericalError("non-finite kernel passed to trace_norm")
    try:
        if np.allclose(K, K.conj().T, rtol=0, atol=1e-14 * max(np.abs(K).max(), 1e-300)):
            s = np.abs(np.linalg.eigvalsh(0.5 * (K + K.conj().T)))
        else:
            s = np.linalg.svd(K, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular value decomposition failed: {exc}") from exc
    return float(h * s.sum())


def hs_norm(op, h: float | None = None) -> float:
    """``||h K||_HS = h * ||K||_F``."""
    K, h = _kernel(op, h)
    return float(h * np.linalg.norm(K))


# ---------------------------------------------------------------- Sobolev


def _fd_derivative(f: np.ndarray, dv: float, axis: int) -> np.ndarray:
    """Fourth-order central difference, periodic in ``v`` like the Vlasov interpolation."""
    r = lambda k: np.roll(f, k, axis=axis)
    return (r(2) - 8 * r(1) + 8 * r(-1) - r(-2)) / (12 * dv)


def _v_derivatives(W: np.ndarray, grid: PhaseGrid, order: int, method: str) -> list[np.ndarray]:
    out = [W]
    if method == "spectral":
        kv = grid.velocity_wavenumbers()
        What = np.fft.fft(W, axis=0)
        for j in range(1, order + 1):
            mult = (1j * kv) ** j
            if j % 2:
                mult[grid.m // 2] = 0
            out.append(np.fft.ifft(What * mult[:, None], axis=0))
    elif method == "fd":
        for _ in range(order):
            out.append(_fd_derivative(out[-1], grid.dv, axis=0))
    else:
        raise ConfigurationError(f"unknown velocity derivative method {method!r}")
    return out


def sobolev_norm(W: PhaseSpaceDensity, s: int, a: int = 0, v_method: str = "fd", squared: bool = False) -> float:
    """Weighted Sobolev norm ``sum_{|beta| <= s} int (1 + xbar^2 + v^2)^a |D^beta W|^2``.

    ``x`` derivatives are spectral; ``v`` derivatives use fourth-order differences
    (``v_method="fd"``) or the FFT (``"spectral"``).  ``xbar`` is the centered
    torus lift.  The square root is returned unless ``squared``.
    """
    if not 0 <= s <= 6:
        raise ConfigurationError("Sobolev order must be in 0..6")
    if a not in SOBOLEV_WEIGHTS:
        raise ConfigurationError(f"weight exponent must be one of {SOBOLEV_WEIGHTS}")
    grid = W.grid
    sg = grid.spatial
    xb = centered_lift(sg)
    v = grid.velocities
    weight = (1 + xb[None, :] ** 2 + v[:, None] ** 2) ** a
    p = sg.wavenumbers
    total = 0.0
    vd = _v_derivatives(np.asarray(W.values), grid, s, v_method)
    for j, g in enumerate(vd):
        gh = np.fft.fft(g, axis=1)
        for i in range(0, s - j + 1):
            mult = (1j * p) ** i
            if i % 2:
                mult[sg.nyquist_index] = 0
            d = np.fft.ifft(gh * mult[None, :], axis=1) if i else g
            total += float(np.sum(weight * np.abs(d) ** 2))
    total *= grid.cell
    return total if squared else math.sqrt(total)


# ---------------------------------------------------------------- commutators


def commutator_norms(op: DensityOperator) -> dict[str, float]:
    """Trace and HS norms of ``[x, omega]`` and ``[eps grad, omega]``.

    ``[x, omega]`` has kernel ``d(x, y) omega(x; y)`` with ``d`` the displacement
    wrapped into ``(-L/2, L/2]``; ``[eps grad, omega]`` is diagonal-times-difference
    in the plane-wave basis, ``i eps (p_a - p_b) M[a, b]``.
    """
    g = op.grid
    cx = centered_displacement(g) * op.kernel
    M = to_momentum(op.kernel, g.h)
    p = g.wavenumbers.copy()
    cg_m = 1j * op.eps * (p[:, None] - p[None, :]) * M
    # back to a position kernel (norms are basis independent, but keep kernels comparable)
    cg = np.fft.fft(np.fft.ifft(cg_m, axis=0), axis=1) / g.h
    return {
        "trace_x": trace_norm(cx, g.h),
        "trace_grad": trace_norm(cg, g.h),
        "hs_x": hs_norm(cx, g.h),
        "hs_grad": hs_norm(cg, g.h),
    }


# ---------------------------------------------------------------- observables


def _box_axes(spatial: SpatialGrid, eps: float, box) -> tuple[np.ndarray, np.ndarray]:
    jp, mq = (int(b) for b in box)
    if jp < 0 or mq < 0 or mq >= spatial.n // 2:
        raise ConfigurationError(f"observable box {box} is not admissible for n = {spatial.n}")
    p = 2 * np.pi / spatial.L * np.arange(-jp, jp + 1)
    q = spatial.h / eps * np.arange(-mq, mq + 1)
    return p, q


def observable_transform(W: PhaseSpaceDensity, box=DEFAULT_BOX) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``T[b, c] = eps^{-1} int int W exp(i p_c x + i q_b v)`` over the lattice box.

    By the Fourier-Wigner identity this is ``tr exp(i p x + q eps grad) omega`` for
    ``omega`` the Weyl quantization of ``W``.  Returns ``(p, q, T)``.
    """
    sg = W.grid.spatial
    p, q = _box_axes(sg, W.eps, box)
    X, V = sg.nodes, W.grid.velocities
    Ex = np.exp(1j * np.outer(X, p))
    Ev = np.exp(1j * np.outer(q, V))
    T = Ev @ (np.asarray(W.values) @ Ex) * (W.grid.cell / W.eps)
    return p, q, T


def observable_distance(op: DensityOperator, W: PhaseSpaceDensity, box=DEFAULT_BOX, details: bool = False):
    """``sup |tr e^{ipx + q eps grad}(omega - Weyl(W))| / (1 + |p| + |q|)^2`` over the box.

    ``box = (jp, mq)`` bounds the lattice indices: ``|p| <= jp 2 pi / L`` and
    ``|q| <= mq h / eps``.  Both states are compared through their Wigner
    transforms on the natural grid.
    """
    if W.grid.spatial != op.grid:
        raise ConfigurationError("operator and phase-space density live on different grids")
    Wop = wigner_transform(op)
    if not W.grid.is_natural_for(W.eps):
        W = wigner_transform(weyl_quantize(W))
    diff = Wop.replace(np.asarray(Wop.values) - np.asarray(W.values))
    p, q, T = observable_transform(diff, box)
    weight = (1 + np.abs(p)[None, :] + np.abs(q)[:, None]) ** 2
    R = np.abs(T) / weight
    b, c = np.unravel_index(np.argmax(R), R.shape)
    value = float(R[b, c])
    if details:
        return value, {"p": float(p[c]), "q": float(q[b]), "box": list(box), "p_max": float(p[-1]), "q_max": float(q[-1])}
    return value


def wigner_distance(W1: PhaseSpaceDensity, W2: PhaseSpaceDensity) -> float:
    """``L^2`` distance of two densities on the same phase grid."""
    if W1.grid != W2.grid:
        raise ConfigurationError("phase-space densities live on different grids")
    return W1.replace(np.asarray(W1.values) - np.asarray(W2.values)).l2_norm()


# ---------------------------------------------------------------- report


@dataclass
class NormReport:
    trace_norm: float
    hs_norm: float
    sobolev: dict = field(default_factory=dict)  # "s,a" -> value
    commutator_x: dict = field(default_factory=dict)  # {"trace": .., "hs": ..}
    commutator_grad: dict = field(default_factory=dict)
    observable_sup: float | None = None
    observable_box: list | None = None

    def __post_init__(self):
        for name, val in self._scalars():
            if not (math.isfinite(val) and val >= 0):
                raise NumericalError(f"norm report entry {name} = {val} is not a finite nonnegative number")

    def _scalars(self):
        yield "trace_norm", self.trace_norm
        yield "hs_norm", self.hs_norm
        for k, v in self.sobolev.items():
            yield f"sobolev[{k}]", v
        for k, v in self.commutator_x.items():
            yield f"commutator_x.{k}", v
        for k, v in self.commutator_grad.items():
            yield f"commutator_grad.{k}", v
        if self.observable_sup is not None:
            yield "observable_sup", self.observable_sup

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def norm_report(
    op: DensityOperator,
    W: PhaseSpaceDensity | None = None,
    sobolev: tuple = ((0, 0), (2, 1), (2, 4)),
    box=DEFAULT_BOX,
) -> NormReport:
    """All norms of ``op`` (and of ``W``, default its Wigner transform)."""
    if W is None:
        W = wigner_transform(op)
    c = commutator_norms(op)
    return NormReport(
        trace_norm=trace_norm(op),
        hs_norm=hs_norm(op),
        sobolev={f"{s},{a}": sobolev_norm(W, s, a) for s, a in sobolev},
        commutator_x={"trace": c["trace_x"], "hs": c["hs_x"]},
        commutator_grad={"trace": c["trace_grad"], "hs": c["hs_grad"]},
        observable_sup=observable_distance(op, W, box),
        observable_box=list(box),
    )
