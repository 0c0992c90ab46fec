import numpy as np
import pytest
import scipy.linalg as sl

from conftest import gaussian_projector, random_state
from semiclassic_lab.errors import BlowUpError, ConfigurationError
from semiclassic_lab.grid import SpatialGrid
from semiclassic_lab.hartree import (
    HartreeConfig,
    dispersion_multiplier,
    evolve_hartree,
    hartree_step,
    heisenberg_observable,
    time_grid,
)
from semiclassic_lab.metrics import hs_norm, observable_transform
from semiclassic_lab.states import (
    InteractionPotential,
    build_initial_state,
    density_of,
    wigner_transform,
)


def dense_hamiltonian(grid: SpatialGrid, eps: float, U: np.ndarray) -> np.ndarray:
    """``sqrt(1 - eps^2 Delta) + U`` as a dense matrix on grid functions."""
    F = np.fft.fft(np.eye(grid.n), axis=0)
    T = np.fft.ifft(np.sqrt(1 + (eps * grid.wavenumbers) ** 2)[:, None] * F, axis=0)
    return T + np.diag(U)


@pytest.fixture(scope="module")
def cosine_run():
    eps = 1 / 16
    g = SpatialGrid(2.0, 128)
    st = build_initial_state("cosine", 16, eps, g, commutators=False)
    V = InteractionPotential.cosine(2.0)
    traj = evolve_hartree(st.op, V, HartreeConfig(dt=0.1 * eps, snapshot_every=0.1), 0.3)
    return st, V, traj


# ---------------------------------------------------------------- multiplier


def test_dispersion_multiplier_values():
    g = SpatialGrid(np.pi, 16)  # p = 2 k
    m = dispersion_multiplier(g, 0.5)
    p = g.momentum_nodes
    assert m[p == 0][0] == 1.0
    assert m[np.isclose(p, 2)][0] == pytest.approx(1.41421356, abs=1e-8)


def test_dispersion_multiplier_small_eps():
    g = SpatialGrid(2.0, 32)
    pmax = np.abs(g.momentum_nodes).max()
    devs = []
    for eps in (1e-3, 1e-4, 1e-5):
        dev = np.abs(dispersion_multiplier(g, eps) - 1).max()
        assert dev <= 0.5 * (eps * pmax) ** 2
        devs.append(dev)
    assert np.polyfit(np.log([1e-3, 1e-4, 1e-5]), np.log(devs), 1)[0] == pytest.approx(2.0, abs=0.01)


# ---------------------------------------------------------------- config


def test_dt_cap():
    HartreeConfig(dt=0.1 / 16).check(1 / 16)
    with pytest.raises(ConfigurationError):
        HartreeConfig(dt=0.2 / 16).check(1 / 16)
    with pytest.raises(ConfigurationError):
        HartreeConfig(dt=-1.0)
    with pytest.raises(ConfigurationError):
        HartreeConfig(dt=0.01, self_consistency="exact")


def test_step_rejects_large_dt(grid64, rng):
    op = random_state(grid64, 1 / 16, rng)
    with pytest.raises(ConfigurationError):
        hartree_step(op, HartreeConfig(dt=0.1), None)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blow_up_reported(grid64, rng):
    op = random_state(grid64, 1 / 16, rng)
    U = np.full(64, np.inf)
    with pytest.raises(BlowUpError):
        hartree_step(op, HartreeConfig(dt=1e-3, external_potential=U))


def test_time_grid():
    assert time_grid(0.5, 0.03, 0.1) == (20, 0.025, 4)
    steps, dt, per = time_grid(1.0, 0.1, None)
    assert (steps, per) == (10, 10) and dt == pytest.approx(0.1)
    with pytest.raises(ConfigurationError):
        time_grid(0.5, 0.01, 0.3)


# ---------------------------------------------------------------- single steps


def test_dt_zero_is_identity(grid64, rng):
    op = random_state(grid64, 1 / 16, rng)
    assert hartree_step(op, HartreeConfig(dt=0.0)) is op


def test_free_step_is_kinetic_conjugation(grid64, rng):
    eps, dt = 1 / 16, 1 / 160
    op = random_state(grid64, eps, rng)
    out = hartree_step(op, HartreeConfig(dt=dt), None)
    H = dense_hamiltonian(grid64, eps, np.zeros(64))
    E = sl.expm(-1j * dt * H / eps)
    assert hs_norm(out.kernel - E @ op.kernel @ E.conj().T, grid64.h) < 1e-12
    assert wigner_transform(out).mass == pytest.approx(wigner_transform(op).mass, abs=1e-12)


def test_dense_oracle_one_step(rng):
    n, eps, L = 32, 0.25, 2 * np.pi
    g = SpatialGrid(L, n)
    op = random_state(g, eps, rng)
    U = np.cos(2 * np.pi * g.nodes / L)
    H = dense_hamiltonian(g, eps, U)
    dts = [1e-2, 5e-3, 2.5e-3]
    errs = []
    for dt in dts:
        out = hartree_step(op, HartreeConfig(dt=dt, external_potential=U))
        E = sl.expm(-1j * dt * H / eps)
        errs.append(hs_norm(out.kernel - E @ op.kernel @ E.conj().T, g.h))
    assert errs[0] < 1e-6
    assert 2.7 <= np.polyfit(np.log(dts), np.log(errs), 1)[0] <= 3.3


def test_external_potential_forms_agree(rng):
    g = SpatialGrid(2.0, 32)
    op = random_state(g, 0.25, rng)
    V = InteractionPotential.cosine(2.0, 0.7)
    outs = [
        hartree_step(op, HartreeConfig(dt=0.01, external_potential=ext)).kernel
        for ext in (V, V.values_on(g), lambda x: 0.7 * np.cos(np.pi * x))
    ]
    assert np.abs(outs[0] - outs[1]).max() < 1e-13
    assert np.abs(outs[0] - outs[2]).max() < 1e-13


def test_hermiticity_per_step(grid64, rng):
    op = random_state(grid64, 1 / 16, rng)
    V = InteractionPotential.cosine(2.0)
    for mode in ("frozen_density", "predictor_corrector"):
        out = hartree_step(op, HartreeConfig(dt=1 / 160, self_consistency=mode), V)
        K = out.kernel
        assert np.abs(K - K.conj().T).max() <= 1e-12 * np.abs(K).max()


def test_gauge_invariance(grid64, rng):
    op = random_state(grid64, 1 / 16, rng)
    V = InteractionPotential.cosine(2.0)
    cfg = HartreeConfig(dt=1 / 160, snapshot_every=0.05)
    a = evolve_hartree(op, V, cfg, 0.1).snapshots[-1]
    b = evolve_hartree(op, V.shifted(3.7), cfg, 0.1).snapshots[-1]
    assert np.abs(a.kernel - b.kernel).max() < 1e-12 * np.abs(a.kernel).max()


# ---------------------------------------------------------------- trajectories


def test_zero_horizon(grid64, rng):
    op = random_state(grid64, 1 / 16, rng)
    traj = evolve_hartree(op, None, HartreeConfig(dt=1e-3), 0.0)
    assert traj.times == [0.0] and traj.snapshots == [op]


def test_free_gaussian_spreads():
    eps = 1 / 32
    g = SpatialGrid(2.0, 256)
    op = gaussian_projector(g, eps, 1.0)
    traj = evolve_hartree(op, None, HartreeConfig(dt=0.1 * eps, snapshot_every=0.1), 0.3)
    widths = []
    for snap in traj.snapshots:
        rho = density_of(snap)
        assert rho.mass == pytest.approx(1.0, abs=1e-10)
        x = g.nodes
        mean = g.h * np.sum(x * rho.rho)
        widths.append(np.sqrt(g.h * np.sum((x - mean) ** 2 * rho.rho)))
    assert np.all(np.diff(widths) > 0)


def test_invariants_at_every_snapshot(cosine_run):
    st, _, traj = cosine_run
    lam0 = np.sort(st.op.eigenvalues())
    for snap, cons in zip(traj.snapshots, traj.conserved):
        assert abs(cons["trace"] - 16) <= 1e-10 * 16
        lam = np.sort(snap.eigenvalues())
        assert lam.min() >= -1e-10 and lam.max() <= 1 + 1e-10
        assert np.abs(lam - lam0).max() <= 1e-10
        assert cons["hermiticity"] <= 1e-12 * np.abs(snap.kernel).max()


def test_snapshot_lookup(cosine_run):
    _, _, traj = cosine_run
    assert len(traj) == 4
    assert traj.at(0.2) is traj.snapshots[2]
    with pytest.raises(KeyError):
        traj.at(0.25)


def test_callback_sees_snapshots(grid64, rng):
    op = random_state(grid64, 1 / 16, rng)
    seen = []
    evolve_hartree(op, None, HartreeConfig(dt=1 / 160, snapshot_every=0.05), 0.1, callback=lambda t, s: seen.append(t))
    assert seen == pytest.approx([0.05, 0.1])


def test_propagator_reproduces_run(cosine_run):
    st, _, traj = cosine_run
    prop = traj.propagator
    K = prop.conjugate(st.op.kernel)
    assert np.abs(K - traj.snapshots[-1].kernel).max() < 1e-11 * np.abs(K).max()
    half = prop.window(0, len(prop.potentials) // 3)
    assert np.abs(half.conjugate(st.op.kernel) - traj.at(0.1).kernel).max() < 1e-11 * np.abs(K).max()


def test_propagator_factors_are_unitary(cosine_run):
    _, _, traj = cosine_run
    prop = traj.propagator
    assert np.abs(np.abs(prop.kinetic_factor) - 1).max() < 1e-14
    for k in range(len(prop.potentials)):
        assert np.abs(np.abs(prop.potential_factor(k)) - 1).max() < 1e-14
    rng = np.random.default_rng(0)
    psi = rng.normal(size=128) + 1j * rng.normal(size=128)
    assert np.linalg.norm(prop.apply(psi)) == pytest.approx(np.linalg.norm(psi), rel=1e-12)
    np.testing.assert_allclose(prop.apply_adjoint(prop.apply(psi)), psi, atol=1e-11)


# ---------------------------------------------------------------- observables


def test_identity_observable(grid64, rng):
    op = random_state(grid64, 1 / 16, rng, N=2.0)
    obs = heisenberg_observable(None, 0.0, 0.0, grid=grid64, eps=1 / 16)
    np.testing.assert_allclose(obs(op.kernel), op.kernel)
    assert obs.trace_against(op) == pytest.approx(2.0, rel=1e-12)


@pytest.mark.parametrize("jp,mq", [(1, 0), (0, 1), (3, 2), (-2, 5), (1, -3)])
def test_bare_observable_is_fourier_wigner(jp, mq):
    eps = 1 / 32
    g = SpatialGrid(2.0, 256)
    st = build_initial_state("cosine", 32, eps, g, commutators=False)
    obs = heisenberg_observable(None, jp * 2 * np.pi / g.L, mq * g.h / eps, grid=g, eps=eps)
    assert obs.snap_distance == pytest.approx(0.0, abs=1e-12)
    p, q, T = observable_transform(st.wigner, box=(abs(jp), abs(mq) + 1))
    b = int(np.argmin(np.abs(q - obs.q)))
    c = int(np.argmin(np.abs(p - obs.p)))
    assert abs(obs.trace_against(st.op) - T[b, c]) < 1e-10 * 32


def test_phase_observable_gaussian_characteristic_function():
    eps, L = 1 / 64, 4.0
    g = SpatialGrid(L, 256)
    x0 = 1.5
    op = gaussian_projector(g, eps, x0)
    for j in (1, 3, 7):
        p = j * 2 * np.pi / L
        obs = heisenberg_observable(None, p, 0.0, grid=g, eps=eps)
        expected = np.exp(1j * p * x0 - eps * p**2 / 4)
        assert abs(obs.trace_against(op) - expected) < 1e-8


def test_heisenberg_picture(cosine_run):
    st, _, traj = cosine_run
    eps = st.op.eps
    g = st.op.grid
    obs = heisenberg_observable(traj.propagator, 2 * np.pi / g.L, 3 * g.h / eps)
    direct = heisenberg_observable(None, obs.p, obs.q, grid=g, eps=eps).trace_against(traj.snapshots[-1])
    assert abs(obs.trace_against(st.op) - direct) < 1e-10 * 16


def test_off_lattice_snapping(grid64):
    eps = 1 / 16
    obs = heisenberg_observable(None, 3.3, 0.0, grid=grid64, eps=eps)
    assert obs.p == pytest.approx(np.pi)
    assert obs.snap_distance == pytest.approx(3.3 - np.pi)
    with pytest.raises(ConfigurationError):
        heisenberg_observable(None, 3.3, 0.0, grid=grid64, eps=eps, strict=True)
    with pytest.raises(ConfigurationError):
        heisenberg_observable(None, 1.0, 0.0)
