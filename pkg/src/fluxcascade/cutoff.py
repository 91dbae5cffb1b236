"""Refined cutoff functions with closed-form gradients and Laplacians.

Every cutoff is built from the C^2 bridge ``p(s) = 15 s^4 - 24 s^5 + 10 s^6``.
Quartic vanishing at ``s = 0`` keeps ``p'/p^delta`` and ``p''/p^(2 delta - 1)``
bounded for ``delta <= 3/4``.

Spatial cutoffs come in two families:

* radial windows ``W(|x - x0|)`` (ball interior, shell interior, global psi0);
* boundary-cone cutoffs ``psi0(x) * H(D(x))`` for elements that poke out of
  ``B(0, R0)``.  ``D`` blends the distance to ``x0`` (inside the ball) with the
  distance from the radial projection ``R0 x/|x|`` to ``x0`` (outside), across a
  thin band of half-width ``eps`` around ``S(0, R0)``.  Outside the ball ``D``
  depends on direction only, which produces the cone geometry.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels


class CutoffError(ValueError):
    """Invalid cutoff parameters or an unbounded ratio."""


# --- the profile --------------------------------------------------------------

def profile(s):
    s = np.clip(s, 0.0, 1.0)
    return s ** 4 * (15.0 - 24.0 * s + 10.0 * s * s)


def profile_d1(s):
    s = np.clip(s, 0.0, 1.0)
    return 60.0 * s ** 3 * (1.0 - s) ** 2


def profile_d2(s):
    s = np.clip(s, 0.0, 1.0)
    return 60.0 * s * s * (1.0 - s) * (3.0 - 5.0 * s)


def profile_grad_ratio(s, delta):
    """``p'(s) / p(s)^delta`` with the s^4 factor cancelled analytically."""
    s = np.asarray(s, dtype=float)
    q = 15.0 - 24.0 * s + 10.0 * s * s
    return 60.0 * s ** (3.0 - 4.0 * delta) * (1.0 - s) ** 2 / q ** delta


def profile_lap_ratio(s, delta):
    """``|p''(s)| / p(s)^(2 delta - 1)``, cancelled analytically."""
    s = np.asarray(s, dtype=float)
    q = 15.0 - 24.0 * s + 10.0 * s * s
    e = 2.0 * delta - 1.0
    return 60.0 * s ** (2.0 - 4.0 * e) * np.abs((1.0 - s) * (3.0 - 5.0 * s)) / q ** e


@dataclass(frozen=True)
class RadialProfile:
    delta: float = 0.75

    def __post_init__(self):
        check_delta(self.delta)

    def __call__(self, s):
        return profile(s)

    def d1(self, s):
        return profile_d1(s)

    def d2(self, s):
        return profile_d2(s)


def check_delta(delta: float) -> None:
    if not (0.5 < delta < 1.0):
        raise CutoffError(f"delta must lie in (1/2, 1), got {delta}")


# --- one-dimensional windows ----------------------------------------------------

@dataclass(frozen=True)
class Window:
    """Piecewise function of a scalar ``d``.

    Rises from 0 at ``rise0`` to 1 at ``rise1`` (skipped when ``rise1 <= 0``),
    equals 1 up to ``fall0`` and drops to 0 at ``fall1``.
    """

    rise0: float
    rise1: float
    fall0: float
    fall1: float

    def __post_init__(self):
        if not (self.rise0 <= self.rise1 <= self.fall0 < self.fall1):
            raise CutoffError(f"window breakpoints out of order: {self}")

    @property
    def has_rise(self) -> bool:
        return self.rise1 > 0.0

    def evaluate(self, d):
        d = np.asarray(d, dtype=float)
        v = np.ones_like(d)
        d1 = np.zeros_like(d)
        d2 = np.zeros_like(d)
        wf = self.fall1 - self.fall0
        sf = (self.fall1 - d) / wf
        m = d > self.fall0
        v[m] = profile(sf[m])
        d1[m] = -profile_d1(sf[m]) / wf
        d2[m] = profile_d2(sf[m]) / wf ** 2
        if self.has_rise:
            wr = self.rise1 - self.rise0
            sr = (d - self.rise0) / wr
            m = d < self.rise1
            v[m] = profile(sr[m])
            d1[m] = profile_d1(sr[m]) / wr
            d2[m] = profile_d2(sr[m]) / wr ** 2
        return v, d1, d2


# --- spatial cutoffs ------------------------------------------------------------

KINDS = ("ball-interior", "ball-boundary-cone", "shell-interior", "shell-boundary-cone", "global-psi0")


@dataclass(frozen=True, eq=False)
class SpatialCutoff:
    """Base class: ``evaluate`` returns psi, grad psi (m, 3) and lap psi."""

    kind: str
    center: np.ndarray
    radii: tuple
    R0: float
    delta: float
    length_scale: float

    @property
    def weight_exponent(self) -> float:
        return 2.0 * self.delta - 1.0

    def evaluate(self, points: np.ndarray):
        raise NotImplementedError

    def value(self, points) -> np.ndarray:
        return self.evaluate(np.atleast_2d(points))[0]

    def support_box(self) -> tuple[np.ndarray, float]:
        """A ball ``(centre, radius)`` that contains the support."""
        raise NotImplementedError

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "center": [float(c) for c in self.center],
            "radii": [float(r) for r in self.radii],
            "R0": self.R0,
            "delta": self.delta,
            "length_scale": self.length_scale,
        }


@dataclass(frozen=True, eq=False)
class RadialCutoff(SpatialCutoff):
    window: Window = None

    def evaluate(self, points):
        rel = np.asarray(points, dtype=float) - self.center
        w = self.window
        psi, gx, gy, gz, lap = kernels.radial_cutoff_eval(
            np.ascontiguousarray(rel[:, 0]), np.ascontiguousarray(rel[:, 1]),
            np.ascontiguousarray(rel[:, 2]), w.rise0, w.rise1, w.fall0, w.fall1)
        return psi, np.stack([gx, gy, gz], axis=1), lap

    def support_box(self):
        return self.center, self.window.fall1


def _psi0_window(R0: float) -> Window:
    return Window(0.0, 0.0, R0, 2.0 * R0)


@dataclass(frozen=True, eq=False)
class ConeCutoff(SpatialCutoff):
    window: Window = None  # H, as a function of the blended distance D
    eps: float = 0.0       # half-width of the blending band around S(0, R0)

    def support_box(self):
        return np.zeros(3), 2.0 * self.R0

    def blended_distance(self, points):
        """D, grad D and lap D; entries are NaN-free only where they are needed."""
        x = np.asarray(points, dtype=float)
        x0 = self.center
        R0, eps = self.R0, self.eps
        r = np.linalg.norm(x, axis=1)
        rs = np.where(r > 0, r, 1.0)
        xh = x / rs[:, None]
        rel = x - x0
        a = np.linalg.norm(rel, axis=1)
        m2 = float(x0 @ x0)
        c = xh @ x0
        B = np.maximum(R0 * R0 + m2 - 2.0 * R0 * c, 0.0)
        b = np.sqrt(B)
        # blending weight: 1 inside R0 - eps, 0 beyond R0 + eps
        blend = Window(0.0, 0.0, R0 - eps, R0 + eps)
        w, w1, w2 = blend.evaluate(r)
        D = w * a + (1.0 - w) * b

        as_ = np.where(a > 0, a, 1.0)
        bs = np.where(b > 0, b, 1.0)
        grad_a = rel / as_[:, None]
        lap_a = 2.0 / as_
        grad_c = (x0[None, :] - c[:, None] * xh) / rs[:, None]
        lap_c = -2.0 * c / rs ** 2
        gc2 = np.maximum(m2 - c * c, 0.0) / rs ** 2
        grad_B = -2.0 * R0 * grad_c
        lap_B = -2.0 * R0 * lap_c
        grad_b = grad_B / (2.0 * bs[:, None])
        lap_b = lap_B / (2.0 * bs) - 4.0 * R0 * R0 * gc2 / (4.0 * bs ** 3)
        grad_w = w1[:, None] * xh
        lap_w = w2 + 2.0 * w1 / rs

        inner = w >= 1.0
        outer = w <= 0.0
        gD = w[:, None] * grad_a + (1.0 - w)[:, None] * grad_b + (a - b)[:, None] * grad_w
        lD = (w * lap_a + (1.0 - w) * lap_b
              + 2.0 * np.einsum("ij,ij->i", grad_w, grad_a - grad_b) + (a - b) * lap_w)
        # pure regions: drop the other branch so 0 * (garbage) cannot leak in
        gD[inner] = grad_a[inner]
        lD[inner] = lap_a[inner]
        gD[outer] = grad_b[outer]
        lD[outer] = lap_b[outer]
        return D, gD, lD

    def evaluate(self, points):
        x = np.asarray(points, dtype=float)
        m = x.shape[0]
        psi = np.zeros(m)
        grad = np.zeros((m, 3))
        lap = np.zeros(m)
        p0, g0x, g0y, g0z, l0 = kernels.radial_cutoff_eval(
            np.ascontiguousarray(x[:, 0]), np.ascontiguousarray(x[:, 1]),
            np.ascontiguousarray(x[:, 2]), 0.0, 0.0, self.R0, 2.0 * self.R0)
        live = p0 > 0
        if not live.any():
            return psi, grad, lap
        xl = x[live]
        D, gD, lD = self.blended_distance(xl)
        H, H1, H2 = self.window.evaluate(D)
        g0 = np.stack([g0x[live], g0y[live], g0z[live]], axis=1)
        psi[live] = p0[live] * H
        # derivatives of H vanish on its plateau and beyond its support; only the
        # transition zone needs the chain rule (and only there is D differentiable)
        trans = (H1 != 0.0) | (H2 != 0.0)
        gl = g0 * H[:, None]
        ll = l0[live] * H
        if trans.any():
            t = trans
            gl[t] += p0[live][t, None] * H1[t, None] * gD[t]
            ll[t] += (2.0 * H1[t] * np.einsum("ij,ij->i", g0[t], gD[t])
                      + p0[live][t] * (H2[t] * np.einsum("ij,ij->i", gD[t], gD[t]) + H1[t] * lD[t]))
        grad[live] = gl
        lap[live] = ll
        return psi, grad, lap


def _as_point(x0) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (3,) or not np.all(np.isfinite(x0)):
        raise CutoffError("center must be a finite 3-vector")
    return x0


def _rim_tol(R0: float) -> float:
    return 1e-9 * R0


def make_global_psi0(R0: float, delta: float = 0.75) -> RadialCutoff:
    check_delta(delta)
    if not R0 > 0:
        raise CutoffError("R0 must be positive")
    return RadialCutoff("global-psi0", np.zeros(3), (R0,), R0, delta, R0, _psi0_window(R0))


def make_ball_cutoff(x0, R: float, R0: float, delta: float = 0.75) -> SpatialCutoff:
    """Cutoff for ``B(x0, R)``; switches to the cone form at the rim."""
    check_delta(delta)
    x0 = _as_point(x0)
    if not (0 < R <= R0):
        raise CutoffError(f"need 0 < R <= R0, got R={R}, R0={R0}")
    m = float(np.linalg.norm(x0))
    if m > R0 + _rim_tol(R0):
        raise CutoffError(f"center {x0} lies outside B(0, R0)")
    if m + R <= R0 + _rim_tol(R0):
        return RadialCutoff("ball-interior", x0, (R,), R0, delta, R, Window(0.0, 0.0, R, 2.0 * R))
    return make_boundary_cone_cutoff(x0, R, R0, delta)


def make_boundary_cone_cutoff(x0, R: float, R0: float, delta: float = 0.75) -> ConeCutoff:
    check_delta(delta)
    x0 = _as_point(x0)
    m = float(np.linalg.norm(x0))
    if m == 0.0:
        raise CutoffError("degenerate cone geometry: centre at the origin")
    if not (0 < R <= R0):
        raise CutoffError(f"need 0 < R <= R0, got R={R}, R0={R0}")
    if m > R0 + _rim_tol(R0):
        raise CutoffError(f"center {x0} lies outside B(0, R0)")
    if m + R <= R0:
        raise CutoffError("B(x0, R) lies inside B(0, R0); use the interior form")
    eps = R / 8.0
    win = Window(0.0, 0.0, R + eps, 2.0 * R - eps)
    return ConeCutoff("ball-boundary-cone", x0, (R,), R0, delta, R, win, eps)


def make_shell_cutoff(x0, R1: float, R2: float, R0: float, delta: float = 0.75) -> SpatialCutoff:
    """Cutoff equal to 1 on ``A(x0, R1, R2)``, supported in ``A(x0, 2 R1, R2/2)``."""
    check_delta(delta)
    x0 = _as_point(x0)
    if not (0 < R2 < R1):
        raise CutoffError(f"need 0 < R2 < R1, got R1={R1}, R2={R2}")
    if R1 > R0 + _rim_tol(R0):
        raise CutoffError("need R1 <= R0")
    m = float(np.linalg.norm(x0))
    if m > R0 + _rim_tol(R0):
        raise CutoffError(f"center {x0} lies outside B(0, R0)")
    Rt = min(R2, R1 - R2)
    if m + R1 <= R0 + _rim_tol(R0):
        return RadialCutoff("shell-interior", x0, (R1, R2), R0, delta, Rt,
                            Window(0.5 * R2, R2, R1, 2.0 * R1))
    if m == 0.0:
        raise CutoffError("degenerate cone geometry: centre at the origin")
    if m > R0 - R2 + _rim_tol(R0):
        raise CutoffError("shell cone form needs B(x0, R2) inside B(0, R0)")
    eps = R2 / 8.0
    win = Window(0.5 * R2, R2, R1 + eps, 2.0 * R1 - eps)
    return ConeCutoff("shell-boundary-cone", x0, (R1, R2), R0, delta, Rt, win, eps)


# --- temporal cutoff ----------------------------------------------------------------

@dataclass(frozen=True)
class TemporalCutoff:
    """eta: rises on (0, T/4), equals 1 on [T/4, 5T/4], falls on (5T/4, 2T)."""

    T: float
    delta: float = 0.75

    def __post_init__(self):
        if not self.T > 0:
            raise CutoffError("T must be positive")
        check_delta(self.delta)

    @property
    def _window(self) -> Window:
        T = self.T
        return Window(0.0, 0.25 * T, 1.25 * T, 2.0 * T)

    def value(self, t):
        return self._window.evaluate(np.asarray(t, dtype=float))[0]

    def derivative(self, t):
        return self._window.evaluate(np.asarray(t, dtype=float))[1]

    def evaluate(self, t):
        v, d1, _ = self._window.evaluate(np.atleast_1d(np.asarray(t, dtype=float)))
        return v, d1

    def describe(self) -> dict:
        return {"kind": "temporal", "T": self.T, "delta": self.delta}


def make_temporal_cutoff(T: float, delta: float = 0.75) -> TemporalCutoff:
    return TemporalCutoff(T, delta)


@dataclass(frozen=True, eq=False)
class SpaceTimeCutoff:
    spatial: SpatialCutoff
    temporal: TemporalCutoff

    def value(self, t, points):
        return self.temporal.value(t) * self.spatial.value(points)

    def time_derivative(self, t, points):
        return self.temporal.derivative(t) * self.spatial.value(points)

    def gradient(self, t, points):
        return self.temporal.value(t) * self.spatial.evaluate(np.atleast_2d(points))[1]

    def laplacian(self, t, points):
        return self.temporal.value(t) * self.spatial.evaluate(np.atleast_2d(points))[2]


# --- certification --------------------------------------------------------------------

@dataclass(frozen=True)
class BoundConstants:
    """Measured sup of the normalised ratios at base and refined sampling."""

    grad: float
    lap: Optional[float]
    scale: float
    n_samples: int
    grad_refined: float
    lap_refined: Optional[float]
    extra: dict = field(default_factory=dict)

    @property
    def grad_change(self) -> float:
        return abs(self.grad_refined - self.grad) / self.grad_refined

    @property
    def lap_change(self) -> float:
        if self.lap is None:
            return 0.0
        return abs(self.lap_refined - self.lap) / self.lap_refined

    @property
    def stable(self) -> bool:
        return self.grad_change <= 0.01 and self.lap_change <= 0.01

    @property
    def C0(self) -> float:
        vals = [self.grad_refined] + ([self.lap_refined] if self.lap is not None else [])
        return max(vals)

    def to_dict(self) -> dict:
        return {
            "C0_grad": self.grad_refined, "C0_lap": self.lap_refined,
            "C0_grad_base": self.grad, "C0_lap_base": self.lap,
            "scale": self.scale, "n_samples": self.n_samples, "stable": self.stable,
        }


def _ratios(psi, grad_norm, lap_abs, delta, L):
    live = psi > 1e-300
    if not live.any():
        raise CutoffError("cutoff vanishes on every sample")
    g = grad_norm[live] * L / psi[live] ** delta
    l = lap_abs[live] * L * L / psi[live] ** (2.0 * delta - 1.0)
    return float(g.max()), float(l.max())


def _sample_radial(c: RadialCutoff, n: int):
    w = c.window
    lo = w.rise0 if w.has_rise else 0.0
    rho = lo + (w.fall1 - lo) * (np.arange(1, n + 1) - 0.5) / n
    pts = c.center + rho[:, None] * np.array([1.0, 0.0, 0.0])
    psi, grad, lap = c.evaluate(pts)
    return psi, np.linalg.norm(grad, axis=1), np.abs(lap)


def _cone_axes(x0):
    e = x0 / np.linalg.norm(x0)
    t = np.array([1.0, 0.0, 0.0]) if abs(e[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    f = t - (t @ e) * e
    return e, f / np.linalg.norm(f)


def _sample_cone(c: ConeCutoff, n: int, chunk: int = 400_000):
    """Axisymmetric cutoff: sample the (r, theta) half-plane over the support."""
    m = float(np.linalg.norm(c.center))
    Rout = c.window.fall1 + c.eps
    if m > Rout:
        th_ball = np.arcsin(min(1.0, Rout / m))
    else:
        th_ball = np.pi
    cos_cone = (c.R0 ** 2 + m * m - Rout ** 2) / (2.0 * c.R0 * m)
    th_cone = np.arccos(np.clip(cos_cone, -1.0, 1.0))
    th_max = min(np.pi, 1.05 * max(th_ball, th_cone))
    r_lo = max(0.0, m - Rout)
    side = int(np.ceil(np.sqrt(n)))
    r = r_lo + (2.0 * c.R0 - r_lo) * (np.arange(side) + 0.5) / side
    th = th_max * (np.arange(side) + 0.5) / side
    e, f = _cone_axes(c.center)
    out_psi, out_g, out_l = [], [], []
    rr, tt = np.meshgrid(r, th, indexing="ij")
    rr = rr.ravel()
    tt = tt.ravel()
    for s in range(0, rr.size, chunk):
        rc, tc = rr[s:s + chunk], tt[s:s + chunk]
        pts = rc[:, None] * (np.cos(tc)[:, None] * e + np.sin(tc)[:, None] * f)
        psi, grad, lap = c.evaluate(pts)
        out_psi.append(psi)
        out_g.append(np.linalg.norm(grad, axis=1))
        out_l.append(np.abs(lap))
    return np.concatenate(out_psi), np.concatenate(out_g), np.concatenate(out_l), side * side


def certify_bounds(c, n_samples: Optional[int] = None, refine: int = 10) -> BoundConstants:
    """Measure the normalised derivative ratios, at base and ``refine``x sampling.

    Radial and temporal cutoffs are sampled along one ray (their ratios only
    depend on the radius); cone cutoffs are axisymmetric about the axis through
    their centre, so a dense (r, theta) grid over the support suffices.
    """
    delta = c.delta
    if delta > 0.75 + 1e-12:
        raise CutoffError(
            f"delta={delta} > 3/4: p'/p^delta ~ s^(3-4 delta) is unbounded at the support edge")
    if isinstance(c, TemporalCutoff):
        n = n_samples or 100_000
        out = []
        for k in (n, n * refine):
            t = 2.0 * c.T * (np.arange(1, k + 1) - 0.5) / k
            eta, d1 = c.evaluate(t)
            live = eta > 1e-300
            out.append(float((np.abs(d1[live]) * c.T / eta[live] ** delta).max()))
        return BoundConstants(out[0], None, c.T, n, out[1], None)
    if isinstance(c, RadialCutoff):
        n = n_samples or 100_000
        base = _ratios(*_sample_radial(c, n), delta, c.length_scale)
        fine = _ratios(*_sample_radial(c, n * refine), delta, c.length_scale)
        return BoundConstants(base[0], base[1], c.length_scale, n, fine[0], fine[1])
    if isinstance(c, ConeCutoff):
        n = n_samples or 250_000
        psi, g, l, nb = _sample_cone(c, n)
        base = _ratios(psi, g, l, delta, c.length_scale)
        psi, g, l, _ = _sample_cone(c, n * refine)
        fine = _ratios(psi, g, l, delta, c.length_scale)
        return BoundConstants(base[0], base[1], c.length_scale, nb, fine[0], fine[1])
    raise CutoffError(f"cannot certify object of type {type(c).__name__}")


def profile_constants(delta: float = 0.75, n: int = 1_000_000) -> tuple[float, float]:
    """Dense 1-D sup of ``p'/p^delta`` and ``|p''|/p^(2 delta - 1)`` over (0, 1]."""
    s = np.arange(1, n + 1) / n
    return float(profile_grad_ratio(s, delta).max()), float(profile_lap_ratio(s, delta).max())
