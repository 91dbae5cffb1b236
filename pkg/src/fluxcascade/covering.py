"""Ball and shell coverings of ``B(0, R0)`` on cubic lattices, with certificates."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from . import kernels


class CoveringError(ValueError):
    """No admissible covering for the requested parameters."""


@dataclass(frozen=True, eq=False)
class Lattice:
    spacing: float
    offset: np.ndarray
    indices: np.ndarray  # integer (m, 3)

    @property
    def points(self) -> np.ndarray:
        return self.offset + self.spacing * self.indices


def cubic_lattice(spacing: float, radius: float, offset=(0.0, 0.0, 0.0), closed: bool = True) -> Lattice:
    """Lattice points ``offset + spacing * k`` inside the ball of ``radius``."""
    offset = np.asarray(offset, dtype=float)
    kmax = int(np.ceil((radius + np.abs(offset).max()) / spacing)) + 1
    k = np.arange(-kmax, kmax + 1)
    idx = np.stack(np.meshgrid(k, k, k, indexing="ij"), axis=-1).reshape(-1, 3)
    pts = offset + spacing * idx
    d = np.linalg.norm(pts, axis=1)
    tol = 1e-12 * radius
    keep = d <= radius + tol if closed else d < radius - tol
    return Lattice(spacing, offset, idx[keep])


@dataclass(eq=False)
class Covering:
    centers: np.ndarray
    R: float
    R0: float
    K1: int
    K2: int
    kind: str  # "balls" or "shells"
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.centers)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "R": self.R, "R0": self.R0, "n": self.n,
            "K1": self.K1, "K2": self.K2, "meta": self.meta,
            "centers": self.centers.tolist(),
        }


def k1_for(n: int, R: float, R0: float) -> int:
    """Smallest integer K1 with n <= K1 (R0/R)^3."""
    ratio = n * (R / R0) ** 3
    k = int(np.ceil(ratio - 1e-9))
    return max(k, 1)


# --- probe clouds --------------------------------------------------------------------

def _fibonacci_sphere(m: int, radius: float, shift: float = 0.5) -> np.ndarray:
    i = np.arange(m) + shift
    z = 1.0 - 2.0 * i / m
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    s = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return radius * np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)


@lru_cache(maxsize=8)
def _probe_cloud_cached(R0: float, per_axis: int, sphere: int, stagger: bool) -> np.ndarray:
    h = 2.0 * R0 / per_axis
    a = -R0 + h * (np.arange(per_axis) + (0.5 if stagger else 0.0))
    g = np.stack(np.meshgrid(a, a, a, indexing="ij"), axis=-1).reshape(-1, 3)
    g = g[np.linalg.norm(g, axis=1) <= R0]
    cloud = np.concatenate([g, _fibonacci_sphere(sphere, R0, 0.5 if stagger else 0.25)])
    cloud.setflags(write=False)
    return cloud


def probe_cloud(R0: float, per_axis: int = 80, sphere: int = 40_000, stagger: bool = False) -> np.ndarray:
    """Deterministic points of ``B(0, R0)``: a cube grid clipped to the ball plus a rim sphere."""
    return _probe_cloud_cached(float(R0), int(per_axis), int(sphere), bool(stagger))


def _rim_probe(R0: float, R: float) -> np.ndarray:
    """Construction probes: the rim layer ``R0 - 1.5R <= |x| <= R0`` at spacing R/8.

    Pruning only removes centers on the sphere, so only this layer can lose
    coverage.  The grid is staggered against the certification cloud so the
    construction does not grade itself.
    """
    h = R / 8.0
    m = int(np.ceil(R0 / h)) + 1
    a = h * (np.arange(-m, m) + 0.5)
    inner = max(0.0, R0 - 1.5 * R)
    pts = []
    for x in a:  # slab by slab keeps memory flat
        g = np.stack(np.meshgrid([x], a, a, indexing="ij"), axis=-1).reshape(-1, 3)
        d = np.linalg.norm(g, axis=1)
        pts.append(g[(d <= R0) & (d >= inner)])
    n_sph = int(min(400_000, max(20_000, 60 * (R0 / h) ** 2)))
    return np.concatenate(pts + [_fibonacci_sphere(n_sph, R0, 0.5)])


# --- ball coverings ----------------------------------------------------------------

def build_ball_covering(R0: float, R: float) -> Covering:
    """Cubic lattice of spacing ``2R/sqrt(3)`` (covering radius exactly R).

    Interior lattice points are kept as they are.  Lattice points just outside
    ``B(0, R0)`` are moved radially onto ``S(0, R0)``; the projection is a
    contraction, so coverage of the ball is preserved.  Projected points that
    are not needed on the construction probe cloud are then pruned, outermost
    first.
    """
    if not (0 < R <= R0):
        raise CoveringError(f"need 0 < R <= R0, got R={R}, R0={R0}")
    s = 2.0 * R / np.sqrt(3.0)
    lat = cubic_lattice(s, R0 + R, closed=False)
    pts = lat.points
    d = np.linalg.norm(pts, axis=1)
    inner = d <= R0 * (1 + 1e-12)
    interior = pts[inner]
    outer_d = d[~inner]
    proj = pts[~inner] / outer_d[:, None] * R0
    # deterministic pruning order: farthest original point first, then lexicographic
    order = np.lexsort((proj[:, 2], proj[:, 1], proj[:, 0], -outer_d))
    proj = proj[order]
    centers = np.concatenate([interior, proj])
    n_int = len(interior)

    if R >= R0 * (1 - 1e-12):
        interior, proj, n_int = np.zeros((1, 3)), np.zeros((0, 3)), 1
        centers = interior
    probe = _rim_probe(R0, R)
    rcov = R * (1.0 + 1e-12)
    tree = cKDTree(centers)
    count = np.asarray(tree.query_ball_point(probe, rcov, return_length=True), dtype=np.int64)
    if (count == 0).any():
        raise CoveringError("lattice fails to cover the construction probe cloud")
    ptree = cKDTree(probe)
    alive = np.ones(len(centers), dtype=bool)
    for j in range(n_int, len(centers)):
        near = ptree.query_ball_point(centers[j], rcov)
        if near and (count[near] <= 1).any():
            continue
        alive[j] = False
        if near:
            count[near] -= 1
    centers = centers[alive]
    n = len(centers)
    cov = Covering(centers, R, R0, k1_for(n, R, R0), 1, "balls",
                   {"spacing": s, "n_interior": int(n_int), "n_rim": int(n - n_int)})
    cert = verify_covering(cov)
    cov.K2 = cert.K2_measured
    cov.meta["certificate"] = cert.to_dict()
    return cov


# --- shell coverings -----------------------------------------------------------------

def build_shell_covering(R0: float, R: float) -> Covering:
    """Centres with ``B(x_i, R)`` inside ``B(0, R0)`` whose shells ``A(x_i, 2R, R)`` cover the ball.

    Lattice points restricted to ``B(0, R0 - R)``.  The coarsest spacing among
    ``2R/sqrt(3)``, ``R/sqrt(3)``, ``R/2`` (each with zero or half-cell offset)
    that certifies annulus coverage and ``n >= (R0/R)^3`` is used.
    """
    if not (0 < R <= R0 / 2 * (1 + 1e-12)):
        raise CoveringError(f"need 0 < R <= R0/2, got R={R}, R0={R0}")
    rad = R0 - R
    tried = []
    for s in (2.0 * R / np.sqrt(3.0), R / np.sqrt(3.0), R / 2.0):
        for off in (0.0, 0.5):
            lat = cubic_lattice(s, rad, offset=(off * s,) * 3)
            centers = lat.points
            tried.append((s, off, len(centers)))
            if len(centers) == 0 or len(centers) < (R0 / R) ** 3 - 1e-9:
                continue
            n = len(centers)
            cov = Covering(centers, R, R0, k1_for(n, R, R0), 1, "shells",
                           {"spacing": s, "offset": off * s})
            cert = verify_covering(cov)
            if cert.covers and cert.n_bracket_ok and cert.contained:
                cov.K2 = cert.K2_measured
                cov.meta["certificate"] = cert.to_dict()
                return cov
    raise CoveringError(f"no admissible shell covering for R={R}, R0={R0}; tried {tried}")


# --- certificates --------------------------------------------------------------------

@dataclass(frozen=True)
class CoveringCertificate:
    covers: bool
    n_bracket_ok: bool
    K2_measured: int
    n_probes: int
    uncovered: int
    contained: bool = True

    def to_dict(self) -> dict:
        return {
            "covers": self.covers, "n_bracket_ok": self.n_bracket_ok,
            "K2_measured": self.K2_measured, "n_probes": self.n_probes,
            "uncovered": self.uncovered, "contained": self.contained,
        }


def verify_covering(c: Covering, per_axis: int = 80, sphere: int = 40_000) -> CoveringCertificate:
    """Check coverage and overlap on a dense deterministic probe cloud.

    Balls: each probe within R of a center; overlap counts enlargements
    ``B(x_i, 2R)``.  Shells: each probe in some ``A(x_i, 2R, R)``; overlap counts
    ``A(x_i, 4R, R/2)``.  Boundaries are treated as closed.
    """
    cloud = probe_cloud(c.R0, per_axis, sphere)
    lat = cubic_lattice(2.0 * c.R / np.sqrt(3.0), c.R0)
    pts = np.concatenate([cloud, lat.points])
    centers = np.asarray(c.centers, dtype=float)
    tol = 1e-12 * c.R0
    if len(centers) == 0:
        return CoveringCertificate(False, False, 0, len(pts), len(pts), False)
    if c.kind == "balls":
        hit = kernels.count_within(pts, centers, -1.0, c.R + tol)
        over = kernels.count_within(pts, centers, -1.0, 2.0 * c.R + tol)
        contained = True
    else:
        hit = kernels.count_within(pts, centers, c.R - tol, 2.0 * c.R + tol)
        over = kernels.count_within(pts, centers, 0.5 * c.R - tol, 4.0 * c.R + tol)
        contained = bool((np.linalg.norm(centers, axis=1) <= c.R0 - c.R + tol).all())
    n = len(centers)
    lo = (c.R0 / c.R) ** 3
    bracket = lo * (1 - 1e-12) <= n <= c.K1 * lo * (1 + 1e-12)
    uncovered = int((hit == 0).sum())
    return CoveringCertificate(uncovered == 0, bool(bracket), int(over.max()), len(pts), uncovered, contained)


# --- sub-lattices ----------------------------------------------------------------------

def half_radius_lattice(R0: float, R: float) -> Lattice:
    """The spacing-R/2 lattice inside ``B(0, R0)``."""
    return cubic_lattice(0.5 * R, R0)


def sublattice_decomposition(lat: Lattice, R: float) -> list:
    """Split a spacing-R/2 lattice into the 8^3 = 512 classes of its indices mod 8.

    Points of one class differ by multiples of ``8 * R/2 = 4R`` along each axis,
    so their pairwise distances are at least 4R and the balls ``B(., 2R)`` have
    disjoint interiors.  Empty classes are kept so the list always has 512 entries.
    """
    if not np.isclose(lat.spacing, 0.5 * R, rtol=1e-12, atol=0.0):
        raise CoveringError(f"lattice spacing {lat.spacing} != R/2 = {0.5 * R}")
    cls = np.mod(lat.indices, 8)
    key = (cls[:, 0] * 8 + cls[:, 1]) * 8 + cls[:, 2]
    out = []
    for k in range(512):
        sel = key == k
        out.append(Lattice(lat.spacing, lat.offset, lat.indices[sel]))
    return out


def min_index_separation(sub: Lattice) -> Optional[int]:
    """Smallest Chebyshev index distance inside a sub-lattice (exact integers)."""
    idx = sub.indices
    if len(idx) < 2:
        return None
    diff = np.abs(idx[:, None, :] - idx[None, :, :]).max(axis=2)
    np.fill_diagonal(diff, np.iinfo(np.int64).max)
    return int(diff.min())
