"""Pseudo-spectral solver for the unforced incompressible Navier-Stokes equations.

Velocity lives as ``rfftn`` coefficients on the periodic box.  Time stepping is
classical RK4 with an exact integrating factor for the viscous term; the
nonlinear term ``u x omega`` is evaluated on the grid, truncated by the 2/3 rule
and Leray-projected.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.fft as sfft

from .field import FieldSequence, Grid, ScalarField, Snapshot, VectorField

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Numerical blow-up or an invalid solver configuration."""


@dataclass(frozen=True)
class SolverConfig:
    nu: float
    dt: float
    n_steps: int
    grid: Grid
    initial: dict = field(default_factory=lambda: {"type": "taylor-green"})
    dealias: float = 2.0 / 3.0
    snapshot_every: Optional[int] = None  # default: n_steps // 64

    def __post_init__(self):
        if not self.dt > 0:
            raise SolverError("dt must be positive")
        if not self.nu >= 0:
            raise SolverError("nu must be non-negative")
        if self.n_steps < 2 or int(self.n_steps) != self.n_steps:
            raise SolverError("n_steps must be an integer >= 2")
        if not (0 < self.dealias <= 1):
            raise SolverError("dealias must lie in (0, 1]")
        if self.cadence < 1 or self.n_steps % self.cadence:
            raise SolverError(f"snapshot cadence {self.cadence} does not divide n_steps {self.n_steps}")

    @property
    def cadence(self) -> int:
        if self.snapshot_every is not None:
            return int(self.snapshot_every)
        return max(1, self.n_steps // 64) if self.n_steps % 64 == 0 else _largest_divisor(self.n_steps, 64)

    @property
    def T(self) -> float:
        return 0.5 * self.n_steps * self.dt

    def to_dict(self) -> dict:
        return {
            "nu": self.nu, "dt": self.dt, "n_steps": self.n_steps, "grid": self.grid.to_dict(),
            "initial": dict(self.initial), "dealias": self.dealias, "snapshot_every": self.cadence,
        }


def _largest_divisor(n: int, parts: int) -> int:
    """Cadence giving at least ``parts`` intervals when n is not a multiple of it."""
    for c in range(max(1, n // parts), 0, -1):
        if n % c == 0:
            return c
    return 1


@dataclass(frozen=True, eq=False)
class SpectralState:
    uhat: np.ndarray  # (3, n, n, n//2 + 1) complex
    time: float
    grid: Grid

    def velocity(self) -> VectorField:
        return VectorField(self.grid, np.stack([sfft.irfftn(c, s=self.grid.shape) for c in self.uhat]))

    @classmethod
    def from_velocity(cls, v: VectorField, time: float = 0.0) -> "SpectralState":
        return cls(np.stack([sfft.rfftn(c) for c in v.values]), float(time), v.grid)


# --- spectral helpers ------------------------------------------------------------

def _kvec(grid: Grid):
    return grid.wavenumbers


def _k2_safe(grid: Grid) -> np.ndarray:
    k2 = grid.k_squared.copy()
    k2[0, 0, 0] = 1.0
    return k2


def _integer_modes(grid: Grid):
    n = grid.n
    m = sfft.fftfreq(n, d=1.0 / n)
    mz = sfft.rfftfreq(n, d=1.0 / n)
    return np.abs(m)[:, None, None], np.abs(m)[None, :, None], np.abs(mz)[None, None, :]


def dealias_mask(grid: Grid, fraction: float = 2.0 / 3.0) -> np.ndarray:
    """Keep modes with every ``|m_i| < fraction * n/2`` (integer mode numbers)."""
    cut = fraction * grid.n / 2.0
    a, b, c = _integer_modes(grid)
    return (a < cut) & (b < cut) & (c < cut)


def rfft_weights(grid: Grid) -> np.ndarray:
    """Multiplicity of each rfftn coefficient in the full spectrum."""
    n = grid.n
    w = np.full(n // 2 + 1, 2.0)
    w[0] = 1.0
    w[-1] = 1.0
    return np.broadcast_to(w[None, None, :], (n, n, n // 2 + 1))


def _project(uhat: np.ndarray, grid: Grid) -> np.ndarray:
    k = _kvec(grid)
    kdotu = k[0] * uhat[0] + k[1] * uhat[1] + k[2] * uhat[2]
    f = kdotu / _k2_safe(grid)
    out = np.empty_like(uhat)
    for i in range(3):
        out[i] = uhat[i] - k[i] * f
    return out


def project_divergence_free(state: SpectralState) -> SpectralState:
    """Leray projection; the k = 0 mode is untouched."""
    return replace(state, uhat=_project(state.uhat, state.grid))


def divergence_residual(state: SpectralState) -> float:
    """max |k . u_hat| / max |k| |u_hat|."""
    k = _kvec(state.grid)
    kdotu = k[0] * state.uhat[0] + k[1] * state.uhat[1] + k[2] * state.uhat[2]
    scale = np.sqrt(state.grid.k_squared) * np.sqrt(sum(np.abs(c) ** 2 for c in state.uhat))
    s = float(scale.max())
    return float(np.abs(kdotu).max()) / s if s > 0 else 0.0


class _Stepper:
    """Precomputed factors for one (grid, nu, dt, dealias) combination."""

    def __init__(self, grid: Grid, nu: float, dt: float, dealias: float):
        self.grid = grid
        self.dt = dt
        k2 = grid.k_squared
        self.E = np.exp(-nu * k2 * dt)
        self.Eh = np.exp(-nu * k2 * dt / 2.0)
        self.mask = dealias_mask(grid, dealias)
        self.k = _kvec(grid)
        self.k2s = _k2_safe(grid)
        self.shape = grid.shape

    def nonlinear(self, uhat: np.ndarray) -> np.ndarray:
        k, s = self.k, self.shape
        u = [sfft.irfftn(c, s=s) for c in uhat]
        # omega = curl u
        w0 = sfft.irfftn(1j * (k[1] * uhat[2] - k[2] * uhat[1]), s=s)
        w1 = sfft.irfftn(1j * (k[2] * uhat[0] - k[0] * uhat[2]), s=s)
        w2 = sfft.irfftn(1j * (k[0] * uhat[1] - k[1] * uhat[0]), s=s)
        n = np.empty_like(uhat)
        n[0] = sfft.rfftn(u[1] * w2 - u[2] * w1)
        n[1] = sfft.rfftn(u[2] * w0 - u[0] * w2)
        n[2] = sfft.rfftn(u[0] * w1 - u[1] * w0)
        n *= self.mask
        kdot = (k[0] * n[0] + k[1] * n[1] + k[2] * n[2]) / self.k2s
        for i in range(3):
            n[i] -= k[i] * kdot
        return n

    def step(self, uhat: np.ndarray) -> np.ndarray:
        dt, E, Eh, N = self.dt, self.E, self.Eh, self.nonlinear
        k1 = N(uhat)
        k2 = N(Eh * (uhat + 0.5 * dt * k1))
        k3 = N(Eh * uhat + 0.5 * dt * k2)
        k4 = N(E * uhat + dt * Eh * k3)
        return E * uhat + (dt / 6.0) * (E * k1 + 2.0 * Eh * (k2 + k3) + k4)


def step(state: SpectralState, config: SolverConfig, _cache: dict = {}) -> SpectralState:  # noqa: B006
    """One IF-RK4 step of size ``config.dt``."""
    key = (state.grid, config.nu, config.dt, config.dealias)
    st = _cache.get(key)
    if st is None:
        _cache.clear()
        st = _cache[key] = _Stepper(state.grid, config.nu, config.dt, config.dealias)
    new = st.step(state.uhat)
    if not np.all(np.isfinite(new)):
        raise SolverError(f"non-finite velocity at t={state.time + config.dt}")
    return SpectralState(new, state.time + config.dt, state.grid)


# --- pressure ---------------------------------------------------------------------

def _pad(fh: np.ndarray, n: int, M: int) -> np.ndarray:
    """Zero-pad an rfftn array from n to M points per axis."""
    out = np.zeros((M, M, M // 2 + 1), dtype=complex)
    h = n // 2
    idx = np.r_[0:h, M - h + 1:M]
    src = np.r_[0:h, n - h + 1:n]
    out[np.ix_(idx, idx, np.arange(h))] = fh[np.ix_(src, src, np.arange(h))]
    return out


def _truncate(fh: np.ndarray, n: int, M: int) -> np.ndarray:
    h = n // 2
    idx = np.r_[0:h, M - h + 1:M]
    src = np.r_[0:h, n - h + 1:n]
    out = np.zeros((n, n, n // 2 + 1), dtype=complex)
    out[np.ix_(src, src, np.arange(h))] = fh[np.ix_(idx, idx, np.arange(h))]
    return out


def pressure_hat(uhat: np.ndarray, grid: Grid) -> np.ndarray:
    """Solve ``-lap p = d_i d_j (u_i u_j)`` with 3/2 zero-padded products; zero mean.

    Nyquist modes of the input are dropped (they carry no sign information).
    """
    n = grid.n
    M = 3 * n // 2
    if M % 2:
        M += 1
    scale = (M / n) ** 3
    up = [sfft.irfftn(_pad(c, n, M), s=(M,) * 3) * scale for c in uhat]
    k = _kvec(grid)
    acc = np.zeros((n, n, n // 2 + 1), dtype=complex)
    for i in range(3):
        for j in range(i, 3):
            prod = _truncate(sfft.rfftn(up[i] * up[j]), n, M) / scale
            f = 1.0 if i == j else 2.0
            acc += f * k[i] * k[j] * prod
    ph = -acc / _k2_safe(grid)
    ph[0, 0, 0] = 0.0
    return ph


def pressure_from_velocity(state: SpectralState) -> ScalarField:
    g = state.grid
    return ScalarField(g, sfft.irfftn(pressure_hat(state.uhat, g), s=g.shape))


# --- initial conditions -------------------------------------------------------------

def taylor_green(grid: Grid, t: float = 0.0, nu: float = 0.0) -> VectorField:
    x1, x2, _ = grid.coordinates()
    d = np.exp(-2.0 * nu * t)
    z = np.zeros(grid.shape)
    return VectorField(grid, np.stack([np.sin(x1) * np.cos(x2) * d, -np.cos(x1) * np.sin(x2) * d, z]))


def taylor_green_pressure(grid: Grid, t: float = 0.0, nu: float = 0.0) -> ScalarField:
    """``+(cos 2x1 + cos 2x2)/4``: the sign follows from grad p = -(u.grad)u for this u."""
    x1, x2, _ = grid.coordinates()
    return ScalarField(grid, 0.25 * (np.cos(2 * x1) + np.cos(2 * x2)) * np.exp(-4.0 * nu * t))


def abc_flow(grid: Grid, A: float = 1.0, B: float = 1.0, C: float = 1.0,
             t: float = 0.0, nu: float = 0.0) -> VectorField:
    x1, x2, x3 = grid.coordinates()
    d = np.exp(-nu * t)
    return VectorField(grid, d * np.stack([
        A * np.sin(x3) + C * np.cos(x2),
        B * np.sin(x1) + A * np.cos(x3),
        C * np.sin(x2) + B * np.cos(x1),
    ]))


def spectrum_shape(k, k0: float):
    return k ** 4 * np.exp(-2.0 * (k / k0) ** 2)


def random_divfree_field(grid: Grid, k0: float = 4.0, seed: int = 0, energy: float = 0.5,
                         k_cut: Optional[float] = None,
                         spectrum: Optional[Callable] = None) -> VectorField:
    """Solenoidal Gaussian field with shell energies set to ``E(k) ~ k^4 exp(-2 (k/k0)^2)``.

    Shells are ``round(|k|)`` in integer mode numbers.  Each shell is rescaled
    so its energy equals the requested spectrum exactly; ``energy`` is the mean
    kinetic energy ``<|u|^2>/2``.  Modes with ``|k| > k_cut`` (default: the 2/3
    cutoff ``n/3``) are zero.
    """
    n = grid.n
    kmax = n / 3.0
    if k_cut is None:
        k_cut = np.floor(kmax - 1e-9)
    if k_cut > kmax:
        raise SolverError(f"k_cut={k_cut} exceeds the dealiasing limit n/3={kmax}")
    if not (0 < k0 < k_cut):
        raise SolverError(f"need 0 < k0 < k_cut, got k0={k0}, k_cut={k_cut}")
    spec = spectrum or (lambda k: spectrum_shape(k, k0))
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((3,) + grid.shape)
    uh = np.stack([sfft.rfftn(c) for c in noise])
    uh = _project(uh, grid)
    a, b, c = _integer_modes(grid)
    kmag = np.sqrt(a * a + b * b + c * c)
    keep = (kmag <= k_cut) & dealias_mask(grid) & (kmag > 0)
    uh *= keep
    shell = np.rint(kmag).astype(int)
    w = rfft_weights(grid)
    dens = 0.5 * w * np.sum(np.abs(uh) ** 2, axis=0) / float(n) ** 6
    have = np.bincount(shell.ravel(), weights=(dens * keep).ravel(), minlength=int(k_cut) + 2)
    ks = np.arange(len(have), dtype=float)
    want = np.where(ks > 0, spec(ks), 0.0)
    want[ks > k_cut] = 0.0
    want *= energy / want.sum()
    fac = np.where(have > 0, np.sqrt(want / np.where(have > 0, have, 1.0)), 0.0)
    uh *= fac[shell]
    return SpectralState(uh, 0.0, grid).velocity()


def shell_spectrum(v: VectorField) -> np.ndarray:
    """Energy per integer shell ``round(|k|)``; sums to ``<|u|^2>/2``."""
    g = v.grid
    uh = np.stack([sfft.rfftn(c) for c in v.values])
    a, b, c = _integer_modes(g)
    shell = np.rint(np.sqrt(a * a + b * b + c * c)).astype(int)
    dens = 0.5 * rfft_weights(g) * np.sum(np.abs(uh) ** 2, axis=0) / float(g.n) ** 6
    return np.bincount(shell.ravel(), weights=dens.ravel())


def initial_velocity(grid: Grid, spec: dict) -> VectorField:
    kind = spec.get("type", "taylor-green")
    if kind == "taylor-green":
        return taylor_green(grid)
    if kind == "abc":
        return abc_flow(grid, spec.get("A", 1.0), spec.get("B", 1.0), spec.get("C", 1.0))
    if kind == "random":
        if "seed" not in spec:
            raise SolverError("random initial data needs an explicit seed")
        return random_divfree_field(grid, spec.get("k0", 4.0), int(spec["seed"]),
                                    spec.get("energy", 0.5), spec.get("k_cut"))
    if kind == "zero":
        return VectorField(grid, np.zeros((3,) + grid.shape))
    raise SolverError(f"unknown initial condition type {kind!r}")


# --- global quantities -----------------------------------------------------------------

def global_energy(v: VectorField) -> float:
    return 0.5 * float(np.sum(v.values ** 2)) * v.grid.cell_volume


def global_enstrophy(v: VectorField) -> float:
    """``(1/2) int |curl u|^2``, so that ``dE/dt = -2 nu * enstrophy``."""
    g = v.grid
    k = _kvec(g)
    uh = [sfft.rfftn(c) for c in v.values]
    w = [sfft.irfftn(1j * (k[(i + 1) % 3] * uh[(i + 2) % 3] - k[(i + 2) % 3] * uh[(i + 1) % 3]), s=g.shape)
         for i in range(3)]
    return 0.5 * float(sum(np.sum(c * c) for c in w)) * g.cell_volume


# --- driver ------------------------------------------------------------------------------

def snapshot_of(state: SpectralState) -> Snapshot:
    return Snapshot(state.time, state.velocity(), pressure_from_velocity(state))


def evolve(config: SolverConfig, initial: Optional[VectorField] = None,
           on_snapshot: Optional[Callable[[Snapshot], None]] = None,
           keep: bool = True) -> FieldSequence:
    """Integrate ``n_steps`` steps, snapshotting every ``cadence`` steps over [0, 2T].

    ``on_snapshot`` receives each snapshot as it is produced (for streaming to
    disk).  With ``keep=False`` no snapshots are retained and only the run
    metadata dict (config, snapshot times, global energies) is returned.
    """
    grid = config.grid
    u0 = initial if initial is not None else initial_velocity(grid, config.initial)
    state = project_divergence_free(SpectralState.from_velocity(u0, 0.0))
    state = replace(state, uhat=state.uhat * dealias_mask(grid, config.dealias))
    snaps, energies, times = [], [], []
    cad = config.cadence

    def emit(st: SpectralState, j: int):
        # exact multiples of dt keep snapshot times reproducible
        st = SpectralState(st.uhat, j * config.dt, st.grid)
        snap = snapshot_of(st)
        energies.append(global_energy(snap.velocity))
        times.append(snap.time)
        if on_snapshot is not None:
            on_snapshot(snap)
        if keep:
            snaps.append(snap)

    emit(state, 0)
    for j in range(1, config.n_steps + 1):
        try:
            state = step(state, config)
        except SolverError as exc:
            raise SolverError(f"step {j}: {exc}") from None
        if j % cad == 0:
            emit(state, j)
            log.debug("step %d t=%.4f E=%.6e", j, state.time, energies[-1])
    meta = {"solver": config.to_dict(), "energies": energies, "times": times}
    if not keep:
        return meta
    return FieldSequence(snaps, config.T, config.nu, meta)
