"""Periodic-box fields with spectral calculus and Riemann-sum quadrature.

The box is ``[-L/2, L/2)^3`` sampled at ``n`` points per axis, so the
origin is a grid node and balls centred there stay away from the periodic
seam. Arrays are indexed ``[i1, i2, i3]`` (x1 slowest), double precision.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.fft as sfft


class FieldError(ValueError):
    """Invalid field data or incompatible grids."""


@dataclass(frozen=True)
class Grid:
    n_points_per_axis: int
    box_length: float = 2 * np.pi

    def __post_init__(self):
        n = self.n_points_per_axis
        if int(n) != n or n < 8 or n % 2:
            raise FieldError(f"n_points_per_axis must be an even integer >= 8, got {n}")
        if not self.box_length > 0:
            raise FieldError("box_length must be positive")

    @property
    def n(self) -> int:
        return self.n_points_per_axis

    @property
    def spacing(self) -> float:
        return self.box_length / self.n_points_per_axis

    @property
    def cell_volume(self) -> float:
        return self.spacing ** 3

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n,) * 3

    @cached_property
    def axis(self) -> np.ndarray:
        """Node coordinates along one axis, ``-L/2 + j*h``."""
        return -0.5 * self.box_length + self.spacing * np.arange(self.n)

    def coordinates(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.meshgrid(self.axis, self.axis, self.axis, indexing="ij")

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable wavevector components for the ``rfftn`` layout."""
        k = 2 * np.pi * sfft.fftfreq(self.n, d=self.spacing)
        kz = 2 * np.pi * sfft.rfftfreq(self.n, d=self.spacing)
        return k[:, None, None], k[None, :, None], kz[None, None, :]

    @cached_property
    def k_squared(self) -> np.ndarray:
        k1, k2, k3 = self.wavenumbers
        return k1 ** 2 + k2 ** 2 + k3 ** 2

    @cached_property
    def nyquist_mask(self) -> np.ndarray:
        """False on the unpaired Nyquist planes, where i*k has no real counterpart."""
        half = self.n // 2
        m = np.ones((self.n, self.n, self.n // 2 + 1), dtype=bool)
        m[half, :, :] = False
        m[:, half, :] = False
        m[:, :, half] = False
        return m

    def to_dict(self) -> dict:
        return {"n_points_per_axis": self.n, "box_length": self.box_length}


def _check_finite(values: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        loc = tuple(int(i) for i in np.argwhere(bad)[0])
        raise FieldError(f"{what} has non-finite values (first at index {loc})")


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise FieldError(f"values shape {self.values.shape} != grid shape {self.grid.shape}")
        _check_finite(self.values, "scalar field")

    def __add__(self, other: "ScalarField") -> "ScalarField":
        _same_grid(self, other)
        return ScalarField(self.grid, self.values + other.values)

    def __mul__(self, a: float) -> "ScalarField":
        return ScalarField(self.grid, a * self.values)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class VectorField:
    grid: Grid
    values: np.ndarray  # shape (3, n, n, n)

    def __post_init__(self):
        if self.values.shape != (3,) + self.grid.shape:
            raise FieldError(f"vector values shape {self.values.shape} != (3,)+{self.grid.shape}")
        _check_finite(self.values, "vector field")

    @property
    def components(self) -> tuple[ScalarField, ScalarField, ScalarField]:
        return tuple(ScalarField(self.grid, self.values[i]) for i in range(3))

    @classmethod
    def from_components(cls, comps: Sequence[ScalarField]) -> "VectorField":
        grid = comps[0].grid
        for c in comps[1:]:
            _same_grid(comps[0], c)
        return cls(grid, np.stack([c.values for c in comps]))

    def __mul__(self, a: float) -> "VectorField":
        return VectorField(self.grid, a * self.values)

    __rmul__ = __mul__


def _same_grid(*fields) -> Grid:
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise FieldError("fields live on different grids")
    return g


# --- quadrature and spectral calculus ---------------------------------------

def integrate(f: ScalarField | np.ndarray, grid: Grid | None = None) -> float:
    """Riemann sum ``h^3 * sum(values)``."""
    if isinstance(f, ScalarField):
        grid, values = f.grid, f.values
    else:
        values = np.asarray(f)
        _check_finite(values, "integrand")
    return float(grid.cell_volume * values.sum())


def _spectral_derivatives(grid: Grid, values: np.ndarray) -> np.ndarray:
    """All three first derivatives of a real array, shape (3, n, n, n)."""
    fh = sfft.rfftn(values)
    out = np.empty((3,) + grid.shape)
    for i, k in enumerate(grid.wavenumbers):
        out[i] = sfft.irfftn(1j * k * grid.nyquist_mask * fh, s=grid.shape)
    return out


def gradient(f: ScalarField) -> VectorField:
    return VectorField(f.grid, _spectral_derivatives(f.grid, f.values))


def divergence(v: VectorField) -> ScalarField:
    g = v.grid
    acc = np.zeros(g.shape[:2] + (g.n // 2 + 1,), dtype=complex)
    for i, k in enumerate(g.wavenumbers):
        acc += 1j * k * g.nyquist_mask * sfft.rfftn(v.values[i])
    return ScalarField(g, sfft.irfftn(acc, s=g.shape))


def laplacian(f: ScalarField) -> ScalarField:
    g = f.grid
    return ScalarField(g, sfft.irfftn(-g.k_squared * sfft.rfftn(f.values), s=g.shape))


def velocity_gradient(v: VectorField) -> np.ndarray:
    """Tensor ``G[i, j] = d_i u_j``, shape (3, 3, n, n, n)."""
    g = v.grid
    G = np.empty((3, 3) + g.shape)
    for j in range(3):
        G[:, j] = _spectral_derivatives(g, v.values[j])
    return G


def velocity_gradient_norm_sq(v: VectorField) -> ScalarField:
    """Pointwise ``sum_ij (d_i u_j)^2``."""
    G = velocity_gradient(v)
    return ScalarField(v.grid, np.einsum("ij...,ij...->...", G, G))


# --- analytic sampling --------------------------------------------------------

Analytic = Callable[[np.ndarray, np.ndarray, np.ndarray], object]


def sample_analytic(expr: Analytic, grid: Grid) -> ScalarField | VectorField:
    """Evaluate ``expr(x1, x2, x3)`` at every node.

    A scalar result gives a ScalarField, a 3-sequence gives a VectorField.
    Constants broadcast.
    """
    x1, x2, x3 = grid.coordinates()
    try:
        with np.errstate(all="raise"):
            out = expr(x1, x2, x3)
    except Exception as exc:  # noqa: BLE001 - anything the user callable raises
        raise FieldError(f"analytic expression failed on the grid: {exc}") from exc
    if isinstance(out, (tuple, list)) or (isinstance(out, np.ndarray) and out.ndim == 4):
        if len(out) != 3:
            raise FieldError("vector expression must return three components")
        vals = np.stack([np.broadcast_to(np.asarray(c, dtype=float), grid.shape) for c in out])
        return VectorField(grid, np.ascontiguousarray(vals))
    vals = np.broadcast_to(np.asarray(out, dtype=float), grid.shape)
    return ScalarField(grid, np.ascontiguousarray(vals))


# --- time sequences -----------------------------------------------------------

@dataclass(eq=False)
class Snapshot:
    time: float
    velocity: VectorField
    pressure: ScalarField | None = None
    # Used instead of spectral differentiation when the pressure is not periodic.
    pressure_gradient: VectorField | None = None


@dataclass(eq=False)
class FieldSequence:
    """Time-ordered snapshots on one grid covering ``[0, 2T]``."""

    snapshots: list
    T: float
    nu: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.snapshots:
            raise FieldError("empty sequence")
        times = np.array([s.time for s in self.snapshots])
        if np.any(np.diff(times) <= 0):
            raise FieldError("snapshot times must be strictly increasing")
        g = self.snapshots[0].velocity.grid
        if any(s.velocity.grid != g for s in self.snapshots):
            raise FieldError("snapshots must share one grid")
        if self.T <= 0:
            raise FieldError("T must be positive")
        tol = 1e-9 * max(1.0, self.T)
        if abs(times[0]) > tol or abs(times[-1] - 2 * self.T) > tol:
            raise FieldError(f"snapshots span [{times[0]}, {times[-1]}], expected [0, {2 * self.T}]")

    @property
    def grid(self) -> Grid:
        return self.snapshots[0].velocity.grid

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])

    def __len__(self) -> int:
        return len(self.snapshots)

    def __iter__(self):
        return iter(self.snapshots)
