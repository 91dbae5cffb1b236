"""Pure-numpy versions of the hot kernels (reference and fallback)."""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree


def _p(s):
    return s ** 4 * (15.0 - 24.0 * s + 10.0 * s * s)


def _p1(s):
    return 60.0 * s ** 3 * (1.0 - s) ** 2


def _p2(s):
    return 60.0 * s * s * (1.0 - s) * (3.0 - 5.0 * s)


def radial_cutoff_eval(x, y, z, r_in0, r_in1, r_out0, r_out1):
    """Radial window about the origin: value, gradient components, Laplacian.

    The window rises on (r_in0, r_in1) when r_in1 > 0, is 1 up to r_out0 and
    falls to 0 at r_out1.
    """
    rho = np.sqrt(x * x + y * y + z * z)
    v = np.zeros_like(rho)
    d1 = np.zeros_like(rho)
    d2 = np.zeros_like(rho)
    plateau = (rho >= r_in1) & (rho <= r_out0)
    v[plateau] = 1.0
    wf = r_out1 - r_out0
    m = (rho > r_out0) & (rho < r_out1)
    s = (r_out1 - rho[m]) / wf
    v[m] = _p(s)
    d1[m] = -_p1(s) / wf
    d2[m] = _p2(s) / (wf * wf)
    if r_in1 > 0.0:
        wr = r_in1 - r_in0
        m = (rho > r_in0) & (rho < r_in1)
        s = (rho[m] - r_in0) / wr
        v[m] = _p(s)
        d1[m] = _p1(s) / wr
        d2[m] = _p2(s) / (wr * wr)
    safe = np.where(rho > 0.0, rho, 1.0)
    f = d1 / safe
    return v, f * x, f * y, f * z, d2 + 2.0 * f


def stencil_reduce(idx, w_pow, w, gx, gy, gz, lap, kin, gsq, fx, fy, fz, vol, lapkin):
    """Seven weighted sums over the nodes ``idx`` of flattened fields.

    Returns (sum kin*w_pow, sum gsq*w, sum F.grad w, sum vol*w, sum kin*w,
    sum kin*lap, sum lapkin*w).
    """
    k = kin[idx]
    return (
        float(np.dot(k, w_pow)),
        float(np.dot(gsq[idx], w)),
        float(np.dot(fx[idx], gx) + np.dot(fy[idx], gy) + np.dot(fz[idx], gz)),
        float(np.dot(vol[idx], w)),
        float(np.dot(k, w)),
        float(np.dot(k, lap)),
        float(np.dot(lapkin[idx], w)),
    )


def count_within(points, centers, r_lo, r_hi):
    """Per point, the number of centers at distance d with r_lo <= d <= r_hi."""
    tree = cKDTree(centers)
    hi = tree.query_ball_point(points, r_hi, return_length=True)
    if r_lo <= 0.0:
        return np.asarray(hi, dtype=np.int64)
    inner = tree.query_ball_point(points, np.nextafter(r_lo, 0.0), return_length=True)
    return np.asarray(hi, dtype=np.int64) - np.asarray(inner, dtype=np.int64)
