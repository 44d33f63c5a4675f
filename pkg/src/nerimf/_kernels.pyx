# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.

node_moments
    Per-node shifted log-sum-exp over the circulation atoms, with the first
    and second alpha-moments of the same weights.
ball_masses
    Cumulative mass inside balls of several radii around many centres,
    with optional periodic wrap.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, floor, INFINITY

cnp.import_array()


def node_moments(const double[::1] u, const double[::1] alpha, const double[::1] logw):
    cdef Py_ssize_t n = u.shape[0]
    cdef Py_ssize_t k = alpha.shape[0]
    cdef Py_ssize_t i, j
    cdef double m, t, e, s0, s1, s2, ui, a
    out = np.empty((3, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            ui = u[i]
            # single pass: rescale the running sums whenever the maximum moves
            m = alpha[0] * ui + logw[0]
            s0 = 1.0
            s1 = alpha[0]
            s2 = alpha[0] * alpha[0]
            for j in range(1, k):
                a = alpha[j]
                t = a * ui + logw[j]
                if t > m:
                    e = exp(m - t)
                    s0 = s0 * e + 1.0
                    s1 = s1 * e + a
                    s2 = s2 * e + a * a
                    m = t
                else:
                    e = exp(t - m)
                    s0 += e
                    s1 += a * e
                    s2 += a * a * e
            o[0, i] = m + log(s0)
            o[1, i] = s1 / s0
            o[2, i] = s2 / s0
    return out[0], out[1], out[2]


cdef inline double _wrap(double d, double period) nogil:
    if period > 0.0:
        if d > 0.5 * period:
            d -= period
            if d > 0.5 * period:
                d = d - period * floor(d / period + 0.5)
        elif d < -0.5 * period:
            d += period
            if d < -0.5 * period:
                d = d - period * floor(d / period + 0.5)
    return d


def ball_masses(const double[::1] x, const double[::1] y, const double[::1] mass,
                const double[::1] cx, const double[::1] cy, const double[::1] radii,
                double period_x=0.0, double period_y=0.0):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t nc = cx.shape[0]
    cdef Py_ssize_t nr = radii.shape[0]
    cdef Py_ssize_t c, i, lo, hi, mid
    cdef double dx, dy, d2
    r2_arr = np.square(np.asarray(radii))
    cdef double[::1] r2 = r2_arr
    cdef double rmax2 = r2[nr - 1] if nr > 0 else -1.0
    out = np.zeros((nc, nr + 1), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for c in range(nc):
            for i in range(n):
                dx = _wrap(x[i] - cx[c], period_x)
                dy = _wrap(y[i] - cy[c], period_y)
                d2 = dx * dx + dy * dy
                if d2 > rmax2:
                    continue
                # first radius index with r^2 >= d2
                lo = 0
                hi = nr
                while lo < hi:
                    mid = (lo + hi) >> 1
                    if r2[mid] < d2:
                        lo = mid + 1
                    else:
                        hi = mid
                o[c, lo] += mass[i]
    return np.cumsum(out[:, :nr], axis=1)
