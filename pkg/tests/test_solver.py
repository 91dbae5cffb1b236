import math

import numpy as np
import pytest
from scipy import fft as sfft

from fluxcascade.field import Grid, gradient, VectorField
from fluxcascade.solver import (SolverConfig, SolverError, SpectralState, abc_flow, divergence_residual,
                                evolve, global_energy, global_enstrophy, pressure_from_velocity,
                                project_divergence_free, random_divfree_field, shell_spectrum,
                                spectrum_shape, step, taylor_green, taylor_green_pressure)

G16 = Grid(16, 2 * math.pi)


def _state(v):
    return SpectralState.from_velocity(v)


def test_projection_idempotent_on_solenoidal(grid32):
    s = _state(abc_flow(grid32))
    p = project_divergence_free(s)
    assert np.abs(p.uhat - s.uhat).max() <= 1e-12 * np.abs(s.uhat).max()


def test_projection_kills_gradients(grid32):
    x, y, z = grid32.coordinates()
    from fluxcascade.field import ScalarField
    g = gradient(ScalarField(grid32, np.sin(x) * np.cos(2 * y) + np.cos(3 * z)))
    p = project_divergence_free(_state(g))
    assert np.abs(p.velocity().values).max() < 1e-12


def test_projection_random_field(grid32):
    rng = np.random.default_rng(5)
    s = project_divergence_free(_state(VectorField(grid32, rng.standard_normal((3,) + grid32.shape))))
    assert divergence_residual(s) <= 1e-12


def test_beltrami_pressure(grid32):
    v = abc_flow(grid32, 1.0, 0.8, 0.6)
    p = pressure_from_velocity(_state(v)).values
    kin = 0.5 * np.sum(v.values ** 2, axis=0)
    ref = -(kin - kin.mean())
    assert np.abs(p - ref).max() <= 1e-8
    from fluxcascade.field import ScalarField
    gp = gradient(ScalarField(grid32, p)).values
    gr = gradient(ScalarField(grid32, ref)).values
    assert np.abs(gp - gr).max() <= 1e-8


def test_zero_pressure(grid32):
    p = pressure_from_velocity(_state(VectorField(grid32, np.zeros((3,) + grid32.shape))))
    assert not p.values.any()


def test_taylor_green_pressure(grid32):
    nu, t = 0.1, 0.3
    p = pressure_from_velocity(_state(taylor_green(grid32, t, nu))).values
    assert np.abs(p - taylor_green_pressure(grid32, t, nu).values).max() <= 1e-8


def test_taylor_green_energy_decay():
    cfg = SolverConfig(nu=0.1, dt=0.01, n_steps=64, grid=G16, initial={"type": "taylor-green"})
    meta = evolve(cfg, keep=False)
    e = np.array(meta["energies"])
    exact = e[0] * np.exp(-4 * 0.1 * np.array(meta["times"]))
    assert np.abs(e / exact - 1).max() <= 1e-5


def test_energy_balance_per_step():
    # dE/dt + 2 nu * (1/2) int |curl u|^2 = 0 in the smooth regime
    nu, dt = 0.05, 2e-3
    cfg = SolverConfig(nu=nu, dt=dt, n_steps=4, grid=G16, snapshot_every=1,
                       initial={"type": "random", "k0": 2.0, "seed": 1, "k_cut": 4})
    seq = evolve(cfg)
    v = [s.velocity for s in seq]
    for j in (1, 2, 3):
        dE = (global_energy(v[j + 1]) - global_energy(v[j - 1])) / (2 * dt)
        diss = 2 * nu * global_enstrophy(v[j])
        assert abs(dE + diss) <= 1e-4 * diss


def test_energy_monotone_random():
    cfg = SolverConfig(nu=0.02, dt=0.02, n_steps=40, grid=G16, snapshot_every=1,
                       initial={"type": "random", "k0": 3.0, "seed": 2})
    e = np.array(evolve(cfg, keep=False)["energies"])
    assert np.all(e[1:] <= e[:-1] * (1 + 1e-10))


def test_solenoidal_each_step():
    cfg = SolverConfig(nu=0.02, dt=0.02, n_steps=2, grid=G16, initial={"type": "random", "k0": 3, "seed": 4})
    s = project_divergence_free(_state(random_divfree_field(G16, 3, 4)))
    for _ in range(5):
        s = step(s, cfg)
        assert divergence_residual(s) <= 1e-12


def test_random_field_properties(grid32):
    a = random_divfree_field(grid32, k0=4, seed=7)
    b = random_divfree_field(grid32, k0=4, seed=7)
    assert np.array_equal(a.values, b.values)
    assert divergence_residual(_state(a)) <= 1e-12
    assert 0.5 * np.mean(np.sum(a.values ** 2, axis=0)) == pytest.approx(0.5, rel=1e-12)


def test_random_spectrum_over_seeds(grid32):
    # ensemble over 10 seeds: per-shell energy within 20% of the requested shape
    k_cut = 10
    ks = np.arange(1, k_cut + 1)
    want = spectrum_shape(ks, 4.0)
    want *= 0.5 / want.sum()
    spec = np.mean([shell_spectrum(random_divfree_field(grid32, 4, s, k_cut=k_cut))[1:k_cut + 1]
                    for s in range(10)], axis=0)
    assert np.all(np.abs(spec / want - 1) <= 0.2)


def test_random_rejects_above_dealias(grid32):
    with pytest.raises(SolverError):
        random_divfree_field(grid32, k0=4, seed=0, k_cut=12)


def test_random_needs_seed():
    with pytest.raises(SolverError):
        evolve(SolverConfig(nu=0.1, dt=0.01, n_steps=2, grid=G16, initial={"type": "random"}, snapshot_every=1))


def test_config_validation():
    with pytest.raises(SolverError):
        SolverConfig(nu=0.1, dt=0.01, n_steps=10, grid=G16, snapshot_every=3)
    with pytest.raises(SolverError):
        SolverConfig(nu=0.1, dt=-1, n_steps=10, grid=G16)
    assert SolverConfig(nu=0.1, dt=0.01, n_steps=128, grid=G16).cadence == 2


def test_instability_abort():
    cfg = SolverConfig(nu=0.0, dt=50.0, n_steps=60, grid=G16, snapshot_every=1,
                       initial={"type": "random", "k0": 3.0, "seed": 0, "energy": 1e6})
    with pytest.raises(SolverError), np.errstate(all="ignore"):
        evolve(cfg, keep=False)


def test_snapshot_span():
    cfg = SolverConfig(nu=0.1, dt=0.01, n_steps=8, grid=G16, snapshot_every=2)
    seq = evolve(cfg)
    assert seq.times[0] == 0.0 and seq.times[-1] == pytest.approx(2 * seq.T)
    assert len(seq) == 5
