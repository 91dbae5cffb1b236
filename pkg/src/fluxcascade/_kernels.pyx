# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Semantics match ``_kernels_py`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, floor

cnp.import_array()


cdef inline double _p(double s) nogil:
    return s * s * s * s * (15.0 - 24.0 * s + 10.0 * s * s)


cdef inline double _p1(double s) nogil:
    return 60.0 * s * s * s * (1.0 - s) * (1.0 - s)


cdef inline double _p2(double s) nogil:
    return 60.0 * s * s * (1.0 - s) * (3.0 - 5.0 * s)


def radial_cutoff_eval(const double[::1] x, const double[::1] y, const double[::1] z,
                       double r_in0, double r_in1, double r_out0, double r_out1):
    cdef Py_ssize_t n = x.shape[0], i
    v_a = np.zeros(n)
    gx_a = np.zeros(n)
    gy_a = np.zeros(n)
    gz_a = np.zeros(n)
    l_a = np.zeros(n)
    cdef double[::1] v = v_a, gx = gx_a, gy = gy_a, gz = gz_a, lap = l_a
    cdef double rho, s, d1, d2, f, wf = r_out1 - r_out0, wr = r_in1 - r_in0
    cdef bint rise = r_in1 > 0.0
    with nogil:
        for i in range(n):
            rho = sqrt(x[i] * x[i] + y[i] * y[i] + z[i] * z[i])
            d1 = 0.0
            d2 = 0.0
            if rho >= r_out1:
                continue
            if rise and rho <= r_in0:
                continue
            if rho > r_out0:
                s = (r_out1 - rho) / wf
                v[i] = _p(s)
                d1 = -_p1(s) / wf
                d2 = _p2(s) / (wf * wf)
            elif rise and rho < r_in1:
                s = (rho - r_in0) / wr
                v[i] = _p(s)
                d1 = _p1(s) / wr
                d2 = _p2(s) / (wr * wr)
            else:
                v[i] = 1.0
                continue
            f = d1 / rho
            gx[i] = f * x[i]
            gy[i] = f * y[i]
            gz[i] = f * z[i]
            lap[i] = d2 + 2.0 * f
    return v_a, gx_a, gy_a, gz_a, l_a


def stencil_reduce(const cnp.int64_t[::1] idx, const double[::1] w_pow, const double[::1] w,
                   const double[::1] gx, const double[::1] gy, const double[::1] gz,
                   const double[::1] lap, const double[::1] kin, const double[::1] gsq,
                   const double[::1] fx, const double[::1] fy, const double[::1] fz,
                   const double[::1] vol, const double[::1] lapkin):
    cdef Py_ssize_t m = idx.shape[0], i, j
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0, s4 = 0.0, s5 = 0.0, s6 = 0.0, k
    with nogil:
        for i in range(m):
            j = idx[i]
            k = kin[j]
            s0 += k * w_pow[i]
            s1 += gsq[j] * w[i]
            s2 += fx[j] * gx[i] + fy[j] * gy[i] + fz[j] * gz[i]
            s3 += vol[j] * w[i]
            s4 += k * w[i]
            s5 += k * lap[i]
            s6 += lapkin[j] * w[i]
    return s0, s1, s2, s3, s4, s5, s6


def count_within(points, centers, double r_lo, double r_hi):
    """Cell-list count of centers with r_lo <= |p - c| <= r_hi for each point."""
    cdef double[:, ::1] P = np.ascontiguousarray(points, dtype=np.float64)
    cdef double[:, ::1] C = np.ascontiguousarray(centers, dtype=np.float64)
    cdef Py_ssize_t npts = P.shape[0], nc = C.shape[0]
    out_a = np.zeros(npts, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_a
    if nc == 0 or npts == 0:
        return out_a
    lo_a = np.asarray(centers, dtype=np.float64).min(axis=0)
    cdef double cell = r_hi if r_hi > 0 else 1.0
    cdef double ox = lo_a[0], oy = lo_a[1], oz = lo_a[2]
    span = np.asarray(centers).max(axis=0) - lo_a
    dims_a = (np.floor(span / cell).astype(np.int64) + 1)
    cdef Py_ssize_t nx = dims_a[0], ny = dims_a[1], nz = dims_a[2]
    cid = (np.floor((np.asarray(centers)[:, 0] - ox) / cell).astype(np.int64) * ny
           + np.floor((np.asarray(centers)[:, 1] - oy) / cell).astype(np.int64)) * nz \
        + np.floor((np.asarray(centers)[:, 2] - oz) / cell).astype(np.int64)
    order_a = np.argsort(cid, kind="stable").astype(np.int64)
    start_a = np.searchsorted(cid[order_a], np.arange(nx * ny * nz + 1)).astype(np.int64)
    cdef cnp.int64_t[::1] order = order_a, start = start_a
    cdef double lo2 = r_lo * r_lo if r_lo > 0 else -1.0, hi2 = r_hi * r_hi
    cdef Py_ssize_t i, a, b, c, ia, ib, ic, t, q, cnt
    cdef double dx, dy, dz, d2
    with nogil:
        for i in range(npts):
            a = <Py_ssize_t> floor((P[i, 0] - ox) / cell)
            b = <Py_ssize_t> floor((P[i, 1] - oy) / cell)
            c = <Py_ssize_t> floor((P[i, 2] - oz) / cell)
            cnt = 0
            for ia in range(a - 1, a + 2):
                if ia < 0 or ia >= nx:
                    continue
                for ib in range(b - 1, b + 2):
                    if ib < 0 or ib >= ny:
                        continue
                    for ic in range(c - 1, c + 2):
                        if ic < 0 or ic >= nz:
                            continue
                        q = (ia * ny + ib) * nz + ic
                        for t in range(start[q], start[q + 1]):
                            dx = P[i, 0] - C[order[t], 0]
                            dy = P[i, 1] - C[order[t], 1]
                            dz = P[i, 2] - C[order[t], 2]
                            d2 = dx * dx + dy * dy + dz * dz
                            if d2 <= hi2 and d2 >= lo2:
                                cnt += 1
            out[i] = cnt
    return out_a
