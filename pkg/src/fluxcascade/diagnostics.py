"""Localized energy, enstrophy and flux; time-space ensemble averages.

The expensive part is per snapshot: one pass builds the pointwise densities
(kinetic energy, velocity-gradient norm, flux vector, volume-form flux) and
then every cutoff stencil reduces them with ``kernels.stencil_reduce``.  Time
integrals over ``[0, 2T]`` use trapezoid weights on the snapshot times with
the ``1/T`` prefactor.
"""
from __future__ import annotations

from dataclasses import astuple, dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import scipy.fft as sfft
from scipy.special import spherical_jn

from . import kernels
from .cutoff import (SpatialCutoff, SpaceTimeCutoff, TemporalCutoff, make_ball_cutoff,
                     make_global_psi0, make_shell_cutoff, make_temporal_cutoff)
from .covering import Covering
from .field import FieldSequence, Grid, Snapshot


class DiagnosticsError(ValueError):
    """Missing data, out-of-range times or an under-resolved cutoff."""


# --- stencils -----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Stencil:
    """A cutoff sampled at the grid nodes of its support."""

    cutoff: SpatialCutoff
    idx: np.ndarray       # flat node indices, int64
    psi: np.ndarray
    psi_pow: np.ndarray   # psi^(2 delta - 1)
    gx: np.ndarray
    gy: np.ndarray
    gz: np.ndarray
    lap: np.ndarray

    @property
    def node_grad_ratio(self) -> float:
        live = self.psi > 1e-200
        g = np.sqrt(self.gx[live] ** 2 + self.gy[live] ** 2 + self.gz[live] ** 2)
        return float((g * self.cutoff.length_scale / self.psi[live] ** self.cutoff.delta).max(initial=0.0))

    @property
    def node_lap_ratio(self) -> float:
        live = self.psi > 1e-200
        L = self.cutoff.length_scale
        return float((np.abs(self.lap[live]) * L * L / self.psi_pow[live]).max(initial=0.0))


def _axis_range(grid: Grid, lo: float, hi: float) -> np.ndarray:
    h = grid.spacing
    x0 = -0.5 * grid.box_length
    i0 = int(np.ceil((lo - x0) / h - 1e-9))
    i1 = int(np.floor((hi - x0) / h + 1e-9))
    if i0 < 0 or i1 > grid.n - 1:
        raise DiagnosticsError("cutoff support crosses the periodic seam; enlarge the box or shrink R0")
    return np.arange(i0, i1 + 1)


def check_resolution(length_scale: float, grid: Grid) -> None:
    if length_scale < 4.0 * grid.spacing:
        raise DiagnosticsError(
            f"cutoff length scale {length_scale:.4g} < 4 grid spacings ({4 * grid.spacing:.4g}); under-resolved")


def build_stencil(cutoff: SpatialCutoff, grid: Grid) -> Stencil:
    check_resolution(cutoff.length_scale, grid)
    c, rad = cutoff.support_box()
    ranges = [_axis_range(grid, c[i] - rad, c[i] + rad) for i in range(3)]
    ax = grid.axis
    I, J, K = np.meshgrid(*ranges, indexing="ij")
    pts = np.stack([ax[I.ravel()], ax[J.ravel()], ax[K.ravel()]], axis=1)
    inside = np.linalg.norm(pts - c, axis=1) < rad
    pts = pts[inside]
    flat = ((I.ravel()[inside] * grid.n + J.ravel()[inside]) * grid.n + K.ravel()[inside]).astype(np.int64)
    psi, grad, lap = cutoff.evaluate(pts)
    keep = psi > 0
    return Stencil(cutoff, np.ascontiguousarray(flat[keep]), psi[keep],
                   psi[keep] ** (2.0 * cutoff.delta - 1.0),
                   np.ascontiguousarray(grad[keep, 0]), np.ascontiguousarray(grad[keep, 1]),
                   np.ascontiguousarray(grad[keep, 2]), np.ascontiguousarray(lap[keep]))


# --- pointwise densities ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Densities:
    """Flattened pointwise integrands of one snapshot."""

    time: float
    kin: np.ndarray    # |u|^2 / 2
    gsq: np.ndarray    # sum_ij (d_i u_j)^2
    fx: np.ndarray     # (|u|^2/2 + p) u
    fy: np.ndarray
    fz: np.ndarray
    vol: np.ndarray    # -[(u.grad)u + grad p].u
    lapkin: np.ndarray  # lap(|u|^2 / 2), spectral
    lapu_u: Optional[np.ndarray] = None  # u . lap u
    # a supplied pressure gradient: p = a.x + periodic when spectral_ok, else unusable spectrally
    spectral_ok: bool = True
    affine: Optional[tuple] = None
    u: Optional[np.ndarray] = None     # (3, N), kept only with an affine pressure


def _affine_split(p: np.ndarray, gp: list, grid: Grid) -> Optional[tuple]:
    """Mean gradient a if p - a.x is periodic (checked against the supplied gradient), else None."""
    a = tuple(float(g.mean()) for g in gp)
    ax = grid.axis
    per = p - (a[0] * ax[:, None, None] + a[1] * ax[None, :, None] + a[2] * ax[None, None, :])
    ph = sfft.rfftn(per)
    k = grid.wavenumbers
    scale = max(1.0, max(float(np.abs(g).max()) for g in gp))
    for j in range(3):
        d = sfft.irfftn(1j * k[j] * grid.nyquist_mask * ph, s=grid.shape)
        if np.abs(d + a[j] - gp[j]).max() > 1e-8 * scale:
            return None
    return a


def snapshot_densities(snap: Snapshot, with_laplacian: bool = False) -> Densities:
    if snap.pressure is None:
        raise DiagnosticsError(f"snapshot at t={snap.time} has no pressure; flux needs p")
    v = snap.velocity
    g = v.grid
    u = [np.asarray(v.values[i], dtype=float) for i in range(3)]
    k = g.wavenumbers
    mask = g.nyquist_mask
    kin = 0.5 * (u[0] ** 2 + u[1] ** 2 + u[2] ** 2)
    gsq = np.zeros(g.shape)
    adv_u = np.zeros(g.shape)
    lapu_u = np.zeros(g.shape) if with_laplacian else None
    for i in range(3):
        uh = sfft.rfftn(u[i])
        a = np.zeros(g.shape)
        for j in range(3):
            d = sfft.irfftn(1j * k[j] * mask * uh, s=g.shape)
            gsq += d * d
            a += u[j] * d
        adv_u += u[i] * a
        if with_laplacian:
            lapu_u += u[i] * sfft.irfftn(-g.k_squared * uh, s=g.shape)
    p = np.asarray(snap.pressure.values, dtype=float)
    affine = None
    if snap.pressure_gradient is not None:
        gp = [np.asarray(snap.pressure_gradient.values[i], dtype=float) for i in range(3)]
        affine = _affine_split(p, gp, g)
    else:
        ph = sfft.rfftn(p)
        gp = [sfft.irfftn(1j * k[j] * mask * ph, s=g.shape) for j in range(3)]
    vol = -(adv_u + u[0] * gp[0] + u[1] * gp[1] + u[2] * gp[2])
    e = kin + p
    lapkin = sfft.irfftn(-g.k_squared * sfft.rfftn(kin), s=g.shape)
    flat = lambda a: np.ascontiguousarray(a).reshape(-1)  # noqa: E731
    return Densities(snap.time, flat(kin), flat(gsq), flat(e * u[0]), flat(e * u[1]), flat(e * u[2]),
                     flat(vol), flat(lapkin), None if lapu_u is None else flat(lapu_u),
                     spectral_ok=snap.pressure_gradient is None or affine is not None, affine=affine,
                     u=None if affine is None else np.stack([flat(x) for x in u]))


@dataclass(frozen=True)
class Sums:
    """Spatial integrals of one cutoff against one snapshot."""

    e_psi: float         # int kin psi^(2 delta - 1)
    ens: float           # int |grad u|^2 psi
    flux_surface: float  # int (kin + p) u . grad psi
    flux_volume: float   # int vol psi
    kin_psi: float       # int kin psi
    kin_lap_nodal: float  # int kin lap psi, Laplacian on the cutoff
    kin_lap: float       # int lap(kin) psi, Laplacian moved onto the field


N_SUMS = 7
QUADRATURES = ("grid", "spectral", "auto")


def reduce(st: Stencil, d: Densities, cell_volume: float) -> Sums:
    """Nodal Riemann sums (times h^3)."""
    s = kernels.stencil_reduce(st.idx, st.psi_pow, st.psi, st.gx, st.gy, st.gz, st.lap,
                               d.kin, d.gsq, d.fx, d.fy, d.fz, d.vol, d.lapkin)
    return Sums(*(cell_volume * x for x in s))


def _uses_spectral(cutoff, quadrature: str) -> bool:
    if quadrature not in QUADRATURES:
        raise DiagnosticsError(f"quadrature must be one of {QUADRATURES}, got {quadrature!r}")
    if cutoff.kind == "indicator":
        return False
    radial = hasattr(cutoff, "window") and not hasattr(cutoff, "eps")
    if quadrature == "spectral" and not radial:
        raise DiagnosticsError(f"spectral quadrature needs a radial cutoff, got {cutoff.kind}")
    return radial and quadrature != "grid"


def _spectral_usable(d: Densities, quadrature: str) -> bool:
    if not d.spectral_ok and quadrature == "spectral":
        raise DiagnosticsError(f"t={d.time}: pressure is neither periodic nor affine plus periodic; "
                               "spectral quadrature unavailable")
    return d.spectral_ok


def element_series(seq: FieldSequence, stencils: Sequence[Stencil], quadrature: str = "auto",
                   extra: Optional[Callable[[Densities], None]] = None) -> np.ndarray:
    """Sums for every (snapshot, stencil): array of shape (n_snap, n_stencil, N_SUMS).

    ``auto`` integrates radial cutoffs spectrally and the rest by nodal sums;
    snapshots whose pressure has no periodic-plus-affine split fall back to
    nodal sums.
    """
    spectral = [_uses_spectral(st.cutoff, quadrature) for st in stencils]
    sq = SpectralQuadrature(seq.grid) if any(spectral) else None
    out = np.empty((len(seq), len(stencils), N_SUMS))
    hv = seq.grid.cell_volume
    for j, snap in enumerate(seq):
        d = snapshot_densities(snap)
        use = sq is not None and _spectral_usable(d, quadrature)
        co = sq.density_coefficients(d) if use else None
        for i, st in enumerate(stencils):
            if use and spectral[i]:
                out[j, i] = astuple(sq.integrals(st.cutoff, co))
            else:
                out[j, i] = hv * np.array(kernels.stencil_reduce(
                    st.idx, st.psi_pow, st.psi, st.gx, st.gy, st.gz, st.lap,
                    d.kin, d.gsq, d.fx, d.fy, d.fz, d.vol, d.lapkin))
        if extra is not None:
            extra(d)
    return out


# --- spectral quadrature for radial cutoffs ------------------------------------------------

def radial_transform(window, kmag: np.ndarray, power: float = 1.0, derivative: bool = False) -> np.ndarray:
    """Fourier transform of the radial function ``window(r)**power`` at ``|k|``.

    ``4 pi int w(r)^power r^2 sinc(k r) dr`` by composite Gauss-Legendre on each
    polynomial piece, fine enough to resolve the highest wavenumber.  With
    ``derivative`` the k-derivative ``-4 pi int w^power r^3 j1(k r) dr``.
    """
    kmag = np.asarray(kmag, dtype=float)
    kmax = float(kmag.max(initial=0.0))
    edges = [0.0]
    if window.has_rise:
        edges += [window.rise0, window.rise1]
    edges += [window.fall0, window.fall1]
    xg, wg = np.polynomial.legendre.leggauss(24)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        if b <= a:
            continue
        m = max(1, int(np.ceil((b - a) * kmax / np.pi)))
        sub = np.linspace(a, b, m + 1)
        for c, d in zip(sub[:-1], sub[1:]):
            nodes.append(0.5 * (d - c) * xg + 0.5 * (c + d))
            weights.append(0.5 * (d - c) * wg)
    r = np.concatenate(nodes)
    w = np.concatenate(weights)
    v = window.evaluate(r)[0] ** power
    f = w * v * r * r
    out = np.empty(kmag.shape)
    flat = kmag.reshape(-1)
    res = out.reshape(-1)
    chunk = max(1, 2_000_000 // r.size)
    for i in range(0, flat.size, chunk):
        kk = flat[i:i + chunk, None]
        if derivative:
            res[i:i + chunk] = -4.0 * np.pi * (spherical_jn(1, kk * r[None, :]) @ (f * r))
        else:
            res[i:i + chunk] = 4.0 * np.pi * (np.sinc(kk * r[None, :] / np.pi) @ f)
    return out


class SpectralQuadrature:
    """Exact integrals of trigonometric polynomials against radial cutoffs.

    The grid field is read as its trigonometric interpolant, so for fields
    whose products are resolved on the grid (band-limited inputs) the result
    has no quadrature error at all, unlike the nodal Riemann sum.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        k1, k2, k3 = grid.wavenumbers
        self.k = (k1, k2, k3)
        kk = np.sqrt(grid.k_squared)
        self.kmag_unique, self.inverse = np.unique(np.round(kk, 12), return_inverse=True)
        self.inverse = self.inverse.reshape(kk.shape)
        n = grid.n
        w = np.full(n // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        self.weights = w[None, None, :]
        m = sfft.fftfreq(n, d=1.0 / n)
        mz = sfft.rfftfreq(n, d=1.0 / n)
        # grid origin at -L/2 turns the DFT into Fourier coefficients with a (-1)^m sign
        sign = lambda a: np.where(np.round(a).astype(int) % 2, -1.0, 1.0)  # noqa: E731
        self.shift = sign(m)[:, None, None] * sign(m)[None, :, None] * sign(mz)[None, None, :] / n ** 3
        self._cache: dict = {}

    def coefficients(self, values: np.ndarray) -> np.ndarray:
        return sfft.rfftn(values) * self.shift

    def _table(self, window, power, derivative=False):
        key = (window, power, derivative)
        if key not in self._cache:
            self._cache[key] = radial_transform(window, self.kmag_unique, power, derivative)[self.inverse]
        return self._cache[key]

    def _phase(self, x0):
        k1, k2, k3 = self.k
        return np.exp(1j * k1 * x0[0]) * np.exp(1j * k2 * x0[1]) * np.exp(1j * k3 * x0[2])

    def integrals(self, cutoff, coeffs: dict) -> Sums:
        """Same six integrals as ``reduce`` for a RadialCutoff.

        ``coeffs`` holds the Fourier coefficients of kin, gsq, fx, fy, fz, vol.
        """
        if not hasattr(cutoff, "window"):
            raise DiagnosticsError("spectral quadrature needs a radial cutoff")
        c, rad = cutoff.support_box()
        L = self.grid.box_length
        if np.any(np.abs(c) + rad > 0.5 * L):
            raise DiagnosticsError("cutoff support crosses the periodic seam; enlarge the box or shrink R0")
        ph = self._phase(np.asarray(c, dtype=float)) * self.weights
        t1 = self._table(cutoff.window, 1.0) * ph
        tp = self._table(cutoff.window, 2.0 * cutoff.delta - 1.0) * ph
        mask = self.grid.nyquist_mask
        re = lambda a: float(np.real(a.sum()))  # noqa: E731
        k1, k2, k3 = self.k
        grad_f = -1j * mask * (k1 * coeffs["fx"] + k2 * coeffs["fy"] + k3 * coeffs["fz"])
        lap = re(-self.grid.k_squared * coeffs["kin"] * t1)
        surface = re(grad_f * t1)
        a = coeffs.get("affine")
        if a is not None:
            # int (a.x) u.grad psi = -int psi a.u - int (a.x) (div u) psi, and
            # int x e^{ik.x} psi(|x-c|) = e^{ik.c} (c psi^(k) - i (k/|k|) psi^'(|k|))
            cvec = np.asarray(c, dtype=float)
            au = a[0] * coeffs["u0"] + a[1] * coeffs["u1"] + a[2] * coeffs["u2"]
            div = coeffs["divu"]
            kmag = np.sqrt(self.grid.k_squared)
            khat_a = np.divide(a[0] * k1 + a[1] * k2 + a[2] * k3, kmag,
                               out=np.zeros(kmag.shape), where=kmag > 0)
            td = self._table(cutoff.window, 1.0, True) * ph
            surface -= re(au * t1) + float(np.dot(a, cvec)) * re(div * t1) + re(div * (-1j) * khat_a * td)
        return Sums(re(coeffs["kin"] * tp), re(coeffs["gsq"] * t1), surface,
                    re(coeffs["vol"] * t1), re(coeffs["kin"] * t1), lap, lap)

    def density_coefficients(self, d: Densities) -> dict:
        shape = self.grid.shape
        out = {name: self.coefficients(getattr(d, name).reshape(shape))
               for name in ("kin", "gsq", "vol")}
        if d.affine is None:
            for name in ("fx", "fy", "fz"):
                out[name] = self.coefficients(getattr(d, name).reshape(shape))
            return out
        a = d.affine
        ax = self.grid.axis
        lin = (a[0] * ax[:, None, None] + a[1] * ax[None, :, None] + a[2] * ax[None, None, :]).reshape(-1)
        for i, name in enumerate(("fx", "fy", "fz")):
            out[name] = self.coefficients((getattr(d, name) - lin * d.u[i]).reshape(shape))
            out[f"u{i}"] = self.coefficients(d.u[i].reshape(shape))
        k = self.k
        out["divu"] = 1j * self.grid.nyquist_mask * (k[0] * out["u0"] + k[1] * out["u1"] + k[2] * out["u2"])
        out["affine"] = a
        return out


# --- time quadrature --------------------------------------------------------------------

def trapezoid_weights(times: np.ndarray) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    w = np.zeros_like(t)
    dt = np.diff(t)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


def time_average(seq_or_times, values, T: Optional[float] = None) -> float:
    """``(1/T) int_0^{2T} f dt`` by the trapezoid rule on the snapshot times.

    ``values`` is an array over the snapshot times or a callable ``f(t)``.
    """
    if isinstance(seq_or_times, FieldSequence):
        times, T = seq_or_times.times, seq_or_times.T
    else:
        times = np.asarray(seq_or_times, dtype=float)
        if T is None:
            T = 0.5 * (times[-1] - times[0])
    if len(times) < 3:
        raise DiagnosticsError("time averages need at least 3 snapshots")
    vals = np.array([values(t) for t in times]) if callable(values) else np.asarray(values, dtype=float)
    return float(trapezoid_weights(times) @ vals) / T


@dataclass(frozen=True)
class TimeWeights:
    w: np.ndarray        # trapezoid weights
    eta: np.ndarray
    deta: np.ndarray
    eta_pow: np.ndarray  # eta^(2 delta - 1)
    T: float


def time_weights(seq: FieldSequence, delta: float) -> TimeWeights:
    if len(seq) < 3:
        raise DiagnosticsError("time averages need at least 3 snapshots")
    eta_c = make_temporal_cutoff(seq.T, delta)
    eta, deta = eta_c.evaluate(seq.times)
    return TimeWeights(trapezoid_weights(seq.times), eta, deta, eta ** (2.0 * delta - 1.0), seq.T)


@dataclass(frozen=True)
class ElementAverages:
    """Time-averaged (prefactor 1/T) localized quantities per element."""

    e: np.ndarray
    E: np.ndarray
    Phi: np.ndarray        # surface form
    Phi_volume: np.ndarray
    Psi: np.ndarray        # via the energy balance
    residual: np.ndarray   # Phi - Psi (the anomalous-flux estimate, /T)
    dissipation: np.ndarray  # nu * E


def combine(series: np.ndarray, tw: TimeWeights, nu: float) -> ElementAverages:
    w, eta = tw.w, tw.eta
    S = series
    inv = 1.0 / tw.T
    e = inv * np.einsum("j,ji->i", w * tw.eta_pow, S[:, :, 0])
    E = inv * np.einsum("j,ji->i", w * eta, S[:, :, 1])
    Phi = inv * np.einsum("j,ji->i", w * eta, S[:, :, 2])
    Phiv = inv * np.einsum("j,ji->i", w * eta, S[:, :, 3])
    rhs = (nu * E - inv * np.einsum("j,ji->i", w * tw.deta, S[:, :, 4])
           - nu * inv * np.einsum("j,ji->i", w * eta, S[:, :, 6]))
    return ElementAverages(e, E, Phi, Phiv, rhs, Phi - rhs, nu * E)


# --- single-cutoff quantities at one time ---------------------------------------------------

def _snapshot_at(seq: FieldSequence, t: float) -> Snapshot:
    times = seq.times
    tol = 1e-9 * max(1.0, seq.T)
    if t < -tol or t > 2.0 * seq.T + tol:
        raise DiagnosticsError(f"t={t} outside [0, 2T]=[0, {2 * seq.T}]")
    j = int(np.argmin(np.abs(times - t)))
    return seq.snapshots[j]


def integrate_cutoff(snap: Snapshot, cutoff: SpatialCutoff, quadrature: str = "auto",
                     densities: Optional[Densities] = None) -> Sums:
    """All seven spatial integrals of one snapshot against one cutoff."""
    grid = snap.velocity.grid
    d = densities if densities is not None else snapshot_densities(snap)
    if _uses_spectral(cutoff, quadrature) and _spectral_usable(d, quadrature):
        check_resolution(cutoff.length_scale, grid)
        sq = SpectralQuadrature(grid)
        return sq.integrals(cutoff, sq.density_coefficients(d))
    return reduce(build_stencil(cutoff, grid), d, grid.cell_volume)


def _phi_sums(seq, phi: SpaceTimeCutoff, t: float, quadrature: str):
    snap = _snapshot_at(seq, t)
    eta = float(phi.temporal.evaluate(snap.time)[0][0])
    return integrate_cutoff(snap, phi.spatial, quadrature), eta


def localized_energy(seq: FieldSequence, phi: SpaceTimeCutoff, t: float, quadrature: str = "auto") -> float:
    """``int |u|^2/2 phi^(2 delta - 1)`` at the snapshot nearest ``t``."""
    s, eta = _phi_sums(seq, phi, t, quadrature)
    return eta ** (2.0 * phi.spatial.delta - 1.0) * s.e_psi


def localized_enstrophy(seq: FieldSequence, phi: SpaceTimeCutoff, t: float, quadrature: str = "auto") -> float:
    s, eta = _phi_sums(seq, phi, t, quadrature)
    return eta * s.ens


def localized_flux(seq: FieldSequence, phi: SpaceTimeCutoff, t: float,
                   quadrature: str = "auto") -> tuple[float, float]:
    """(surface form, volume form) of the localized flux at the snapshot nearest ``t``."""
    s, eta = _phi_sums(seq, phi, t, quadrature)
    return eta * s.flux_surface, eta * s.flux_volume


@dataclass(frozen=True)
class LocalizedBudget:
    e_loc: float
    E_loc: float
    flux_surface_form: float
    flux_volume_form: float
    balance_residual: float

    @property
    def two_form_disagreement(self) -> float:
        """|surface - volume| / max(|surface|, nu E_loc) is formed by the caller; this is the raw gap."""
        return abs(self.flux_surface_form - self.flux_volume_form)


def localized_budget(seq: FieldSequence, phi: SpaceTimeCutoff, quadrature: str = "auto") -> LocalizedBudget:
    """Time-integrated (no 1/T) localized quantities of one space-time cutoff."""
    st = build_stencil(phi.spatial, seq.grid)
    S = element_series(seq, [st], quadrature)[:, 0, :]
    eta, deta = phi.temporal.evaluate(seq.times)
    w = trapezoid_weights(seq.times)
    p = 2.0 * phi.spatial.delta - 1.0
    psi_val = float(w @ (seq.nu * eta * S[:, 1] - deta * S[:, 4] - seq.nu * eta * S[:, 6]))
    direct = float(w @ (eta * S[:, 2]))
    return LocalizedBudget(float(w @ (eta ** p * S[:, 0])), float(w @ (eta * S[:, 1])), direct,
                           float(w @ (eta * S[:, 3])), direct - psi_val)


def modified_flux_via_balance(seq: FieldSequence, phi: SpaceTimeCutoff,
                              quadrature: str = "auto") -> tuple[float, float]:
    """(Psi, residual): Psi is the right side of the local energy equality,
    residual the time-integrated direct flux minus Psi.  Both are time integrals
    (no 1/T)."""
    b = localized_budget(seq, phi, quadrature)
    return b.flux_surface_form - b.balance_residual, b.balance_residual


# --- ensemble and global averages ---------------------------------------------------------

@dataclass
class EnsembleAverages:
    kind: str           # "balls" or "shells"
    R: float
    n: int
    e_R: float          # per unit volume: (1/n) sum e_i / R^3
    E_R: float
    Phi_R: float
    Phi_R_volume: float
    Psi_R: float
    residual_R: float
    tilde: dict         # shells: plain element means (no 1/R^3)
    certificate: NodeCertificate
    node_C0_grad: float
    node_C0_lap: float
    elements: Optional[ElementAverages] = None
    kinds: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("kind", "R", "n", "e_R", "E_R", "Phi_R", "Phi_R_volume",
                                          "Psi_R", "residual_R", "node_C0_grad", "node_C0_lap")}
        d["certificate"] = self.certificate.to_dict()
        d["tilde"] = dict(self.tilde)
        d["element_kinds"] = dict(self.kinds)
        return d


def covering_cutoffs(cov: Covering, delta: float = 0.75, cone: bool = True) -> list:
    """One spatial cutoff per covering element.

    With ``cone=False`` boundary balls use the plain radial form (the variant
    for which only the non-localized enstrophy bound survives).
    """
    out = []
    for x in cov.centers:
        if cov.kind == "balls":
            c = make_ball_cutoff(x, cov.R, cov.R0, delta)
            if not cone and c.kind == "ball-boundary-cone":
                from .cutoff import RadialCutoff, Window
                c = RadialCutoff("ball-interior", np.asarray(x, float), (cov.R,), cov.R0, delta, cov.R,
                                 Window(0.0, 0.0, cov.R, 2.0 * cov.R))
        else:
            c = make_shell_cutoff(x, 2.0 * cov.R, cov.R, cov.R0, delta)
        out.append(c)
    return out


def covering_stencils(cov: Covering, grid: Grid, delta: float = 0.75, cone: bool = True) -> list:
    return [build_stencil(c, grid) for c in covering_cutoffs(cov, delta, cone)]


@dataclass(frozen=True)
class NodeCertificate:
    """Pointwise covering facts at grid nodes, against psi0.

    cover_ratio = min sum_i psi_i / psi0 over supp psi0 (>= 1 gives the lower
    bounds); e_overlap and E_overlap are the max of sum_i psi_i^(2 delta - 1) /
    psi0^(2 delta - 1) and sum_i psi_i / psi0 (<= K2 gives the upper bounds).
    """

    max_count: int
    cover_ratio: float
    e_overlap: float
    E_overlap: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def node_certificate(stencils: Sequence[Stencil], psi0: Stencil, n_nodes: int) -> NodeCertificate:
    total = np.zeros(n_nodes)
    total_pow = np.zeros(n_nodes)
    count = np.zeros(n_nodes, dtype=np.int64)
    for st in stencils:
        total[st.idx] += st.psi
        total_pow[st.idx] += st.psi_pow
        count[st.idx] += 1
    ref = np.zeros(n_nodes)
    ref[psi0.idx] = psi0.psi
    ref_pow = np.zeros(n_nodes)
    ref_pow[psi0.idx] = psi0.psi_pow
    live = np.nonzero(count)[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        cover = float((total[psi0.idx] / psi0.psi).min()) if psi0.idx.size else 0.0
        e_ov = float(np.where(ref_pow[live] > 0, total_pow[live] / ref_pow[live], np.inf).max(initial=0.0))
        E_ov = float(np.where(ref[live] > 0, total[live] / ref[live], np.inf).max(initial=0.0))
    return NodeCertificate(int(count.max(initial=0)), cover, e_ov, E_ov)


def ensemble_from_series(series: np.ndarray, stencils: Sequence[Stencil], tw: TimeWeights, nu: float,
                         cov: Covering, psi0_stencil: Stencil, grid: Grid) -> EnsembleAverages:
    el = combine(series, tw, nu)
    n = len(stencils)
    R3 = cov.R ** 3
    mean = lambda a: float(np.mean(a))  # noqa: E731
    cert = node_certificate(stencils, psi0_stencil, grid.n ** 3)
    kinds: dict = {}
    for st in stencils:
        kinds[st.cutoff.kind] = kinds.get(st.cutoff.kind, 0) + 1
    tilde = {"e": mean(el.e), "E": mean(el.E), "Phi": mean(el.Phi), "Psi": mean(el.Psi),
             "residual": mean(el.residual)}
    return EnsembleAverages(
        cov.kind, cov.R, n, mean(el.e) / R3, mean(el.E) / R3, mean(el.Phi) / R3,
        mean(el.Phi_volume) / R3, mean(el.Psi) / R3, mean(el.residual) / R3, tilde, cert,
        max(st.node_grad_ratio for st in stencils), max(st.node_lap_ratio for st in stencils), el, kinds)


def ensemble_average(seq: FieldSequence, cov: Covering, delta: float = 0.75, cone: bool = True,
                     quadrature: str = "auto") -> EnsembleAverages:
    """Mean over covering elements of the time-averaged, R^3-normalized quantities."""
    grid = seq.grid
    stencils = covering_stencils(cov, grid, delta, cone)
    psi0 = build_stencil(make_global_psi0(cov.R0, delta), grid)
    series = element_series(seq, stencils, quadrature)
    return ensemble_from_series(series, stencils, time_weights(seq, delta), seq.nu, cov, psi0, grid)


@dataclass
class GlobalAverages:
    e: float
    E: float
    E_prime: float
    tau0: Optional[float]
    R0: float
    Phi: float = 0.0
    Psi: float = 0.0

    @property
    def defined(self) -> bool:
        return self.tau0 is not None

    @property
    def e_tilde(self) -> float:
        return self.R0 ** 3 * self.e

    @property
    def E_tilde(self) -> float:
        return self.R0 ** 3 * self.E

    def to_dict(self) -> dict:
        return {"e": self.e, "E": self.E, "E_prime": self.E_prime, "tau0": self.tau0, "R0": self.R0,
                "e_tilde": self.e_tilde, "E_tilde": self.E_tilde, "Phi": self.Phi, "Psi": self.Psi}


@dataclass(frozen=True, eq=False)
class IndicatorCutoff(SpatialCutoff):
    """Sharp indicator of B(0, R0); only its values are meaningful."""

    def evaluate(self, points):
        pts = np.asarray(points, dtype=float)
        psi = (np.linalg.norm(pts, axis=1) <= self.R0).astype(float)
        return psi, np.zeros_like(pts), np.zeros(len(pts))

    def support_box(self):
        return np.zeros(3), self.R0


def indicator_stencil(R0: float, grid: Grid, delta: float = 0.75) -> Stencil:
    c = IndicatorCutoff("indicator", np.zeros(3), (R0,), R0, delta, R0)
    rng = [_axis_range(grid, -R0, R0) for _ in range(3)]
    ax = grid.axis
    I, J, K = np.meshgrid(*rng, indexing="ij")
    pts = np.stack([ax[I.ravel()], ax[J.ravel()], ax[K.ravel()]], axis=1)
    inside = np.linalg.norm(pts, axis=1) <= R0
    flat = ((I.ravel()[inside] * grid.n + J.ravel()[inside]) * grid.n + K.ravel()[inside]).astype(np.int64)
    one = np.ones(flat.size)
    z = np.zeros(flat.size)
    return Stencil(c, np.ascontiguousarray(flat), one, one, z, z.copy(), z.copy(), z.copy())


def global_from_series(series: np.ndarray, tw: TimeWeights, nu: float, R0: float) -> GlobalAverages:
    """``series`` columns: [psi0 stencil, indicator stencil]."""
    el = combine(series[:, :1, :], tw, nu)
    R3 = R0 ** 3
    e = float(el.e[0]) / R3
    E = float(el.E[0]) / R3
    Ep = float(tw.w @ (tw.eta * series[:, 1, 1])) / tw.T / R3
    tau0 = float(np.sqrt(e / E)) if E > 0 else None
    return GlobalAverages(e, E, Ep, tau0, R0, float(el.Phi[0]) / R3, float(el.Psi[0]) / R3)


def global_stencils(R0: float, grid: Grid, delta: float = 0.75) -> list:
    return [build_stencil(make_global_psi0(R0, delta), grid), indicator_stencil(R0, grid, delta)]


def global_averages(seq: FieldSequence, R0: float, delta: float = 0.75, quadrature: str = "auto") -> GlobalAverages:
    """e, E with phi0 = eta psi0; E' with the sharp indicator of B(0, R0); tau0 = sqrt(e/E)."""
    sts = global_stencils(R0, seq.grid, delta)
    return global_from_series(element_series(seq, sts, quadrature), time_weights(seq, delta), seq.nu, R0)


# --- shells ------------------------------------------------------------------------------------

@dataclass
class ShellBudget:
    R1: float
    R2: float
    R_tilde: float
    e_shell: float
    E_shell: float
    Phi_shell: float
    Phi_shell_volume: float
    Psi_shell: float
    residual: float
    tau_shell: Optional[float]
    cutoff_kind: str
    node_C0_lap: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def shell_budget(seq: FieldSequence, x0, R1: float, R2: float, R0: float, delta: float = 0.75,
                 quadrature: str = "auto") -> ShellBudget:
    c = make_shell_cutoff(x0, R1, R2, R0, delta)
    st = build_stencil(c, seq.grid)
    el = combine(element_series(seq, [st], quadrature), time_weights(seq, delta), seq.nu)
    e, E = float(el.e[0]), float(el.E[0])
    tau = float(np.sqrt(e / E)) if E > 0 else None
    return ShellBudget(R1, R2, min(R2, R1 - R2), e, E, float(el.Phi[0]), float(el.Phi_volume[0]),
                       float(el.Psi[0]), float(el.residual[0]), tau, c.kind, st.node_lap_ratio)


# --- instantaneous local budget ------------------------------------------------------------------

def local_budget_check(seq: FieldSequence, psi: SpatialCutoff, t_interval: Optional[tuple] = None) -> dict:
    """Compare d/dt int |u|^2/2 psi with Phi + nu int (lap u . u) psi at interior snapshots.

    Phi is the volume form with psi alone.  The time derivative is a central
    difference (second order; fourth order where five points are available).
    Returns the max absolute and relative residuals.
    """
    times = seq.times
    lo, hi = t_interval if t_interval is not None else (times[0], times[-1])
    sel = np.nonzero((times >= lo - 1e-12) & (times <= hi + 1e-12))[0]
    if len(sel) < 3:
        raise DiagnosticsError("local budget needs at least 3 snapshots in the interval")
    st = build_stencil(psi, seq.grid)
    hv = seq.grid.cell_volume
    K = np.empty(len(sel))
    rhs = np.empty(len(sel))
    for m, j in enumerate(sel):
        d = snapshot_densities(seq.snapshots[j], with_laplacian=True)
        K[m] = hv * float(d.kin[st.idx] @ st.psi)
        rhs[m] = hv * float(d.vol[st.idx] @ st.psi) + seq.nu * hv * float(d.lapu_u[st.idx] @ st.psi)
    t = times[sel]
    dK = np.full(len(sel), np.nan)
    for m in range(1, len(sel) - 1):
        uniform5 = 2 <= m <= len(sel) - 3 and np.allclose(np.diff(t[m - 2:m + 3]), t[m + 1] - t[m], rtol=1e-9)
        if uniform5:
            hstep = t[m + 1] - t[m]
            dK[m] = (K[m - 2] - 8 * K[m - 1] + 8 * K[m + 1] - K[m + 2]) / (12 * hstep)
        else:
            dK[m] = (K[m + 1] - K[m - 1]) / (t[m + 1] - t[m - 1])
    ok = ~np.isnan(dK)
    res = np.abs(dK[ok] - rhs[ok])
    scale = max(float(np.abs(dK[ok]).max()), float(np.abs(rhs[ok]).max()))
    return {
        "times": t[ok].tolist(), "dK_dt": dK[ok].tolist(), "rhs": rhs[ok].tolist(),
        "max_abs_residual": float(res.max()),
        "relative_residual": float(res.max() / scale) if scale > 0 else 0.0,
    }
