# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels; see ``_pykernels`` for the reference."""

import numpy as np

from libc.math cimport fabs, pow, copysign, INFINITY

cdef double _SERIES_RATIO = 0.1
cdef int _SERIES_TERMS = 40


def linear_em(A, B, x0, noise, double dt):
    cdef const double[:, ::1] a = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[:, ::1] b = np.ascontiguousarray(B, dtype=np.float64)
    cdef const double[:, ::1] v = np.ascontiguousarray(noise, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t nv = b.shape[1]
    cdef Py_ssize_t steps = v.shape[0]
    out_arr = np.empty((steps + 1, n))
    cdef double[:, ::1] out = out_arr
    cdef double[::1] x = np.array(x0, dtype=np.float64)
    cdef double[::1] dx = np.empty(n)
    cdef Py_ssize_t i, r, c
    cdef double acc
    for r in range(n):
        out[0, r] = x[r]
    for i in range(steps):
        for r in range(n):
            acc = 0.0
            for c in range(n):
                acc += a[r, c] * x[c]
            for c in range(nv):
                acc += b[r, c] * v[i, c]
            dx[r] = dt * acc
        for r in range(n):
            x[r] += dx[r]
            out[i + 1, r] = x[r]
    return out_arr


def paper_verlet(x0, accel, double dt):
    cdef const double[::1] acc = np.ascontiguousarray(accel, dtype=np.float64)
    cdef Py_ssize_t steps = acc.shape[0]
    out_arr = np.empty((steps + 1, 2))
    cdef double[:, ::1] out = out_arr
    cdef double r = float(x0[0])
    cdef double rd = float(x0[1])
    cdef double half_dt2 = 0.5 * dt * dt
    cdef double a
    cdef Py_ssize_t i
    out[0, 0] = r
    out[0, 1] = rd
    for i in range(steps):
        a = acc[i]
        r = r + rd * dt + a * half_dt2
        rd = rd + a * dt
        out[i + 1, 0] = r
        out[i + 1, 1] = rd
    return out_arr


cdef inline double _oddpow(double z, double e) nogil:
    if z == 0.0:
        return 0.0
    return copysign(pow(fabs(z), e), z)


cdef double _series(double q, double s, double e, int shift) nogil:
    cdef double total = 0.0
    cdef double coef = 1.0
    cdef double qs = 1.0
    cdef double term
    cdef int j
    for j in range(_SERIES_TERMS):
        term = coef * qs * pow(s, j + shift) / (j + shift)
        total += term
        if fabs(term) <= 1e-18 * fabs(total):
            break
        coef *= (e - j) / (j + 1)
        qs *= q
    return total


cdef void _moments(double a, double b, double s, double p, double* out) nogil:
    cdef double q, c0, c1, s0, s1, d0, d1, d2
    cdef double m, sc0, sc1, z0, z1, u0, u1, k1, k2, U1_0, U1_1, U2_0, U2_1, i1, i2
    cdef int k
    if s == 0.0:
        for k in range(6):
            out[k] = 0.0
        return
    if b != 0.0 and fabs(a * s) < _SERIES_RATIO * fabs(b):
        q = a / b
        c0 = _oddpow(b, p)
        c1 = p * pow(fabs(b), p - 1.0)
        s0 = _series(q, s, p, 1)
        s1 = _series(q, s, p, 2)
        d0 = _series(q, s, p - 1.0, 1)
        d1 = _series(q, s, p - 1.0, 2)
        d2 = _series(q, s, p - 1.0, 3)
        out[0] = c0 * s0
        out[1] = c0 * (s * s0 - s1)
        out[2] = c1 * d1
        out[3] = c1 * d0
        out[4] = c1 * (s * d1 - d2)
        out[5] = c1 * (s * d0 - d1)
        return
    if a == 0.0:
        out[0] = 0.0
        out[1] = 0.0
        if p == 1.0:
            out[2] = 0.5 * s * s
            out[3] = s
            out[4] = s * s * s / 6.0
            out[5] = 0.5 * s * s
        else:
            for k in range(2, 6):
                out[k] = INFINITY
        return
    # u is homogeneous of degree p in (a, b): rescale so max(|a s|, |b|) = 1
    m = fabs(a) * s
    if fabs(b) > m:
        m = fabs(b)
    a = a / m
    b = b / m
    sc0 = pow(m, p)
    sc1 = pow(m, p - 1.0)
    z0 = b
    z1 = b + a * s
    u0 = _oddpow(z0, p)
    u1 = _oddpow(z1, p)
    k1 = 1.0 / (p + 1.0)
    k2 = 1.0 / ((p + 1.0) * (p + 2.0))
    U1_0 = pow(fabs(z0), p + 1.0) * k1
    U1_1 = pow(fabs(z1), p + 1.0) * k1
    U2_0 = _oddpow(z0, p + 2.0) * k2
    U2_1 = _oddpow(z1, p + 2.0) * k2
    i1 = (U1_1 - U1_0) / a
    i2 = (U2_1 - U2_0 - a * s * U1_0) / (a * a)
    out[0] = sc0 * i1
    out[1] = sc0 * i2
    out[2] = sc1 * (s * u1 - i1) / a
    out[3] = sc1 * (u1 - u0) / a
    out[4] = sc1 * (s * i1 - 2.0 * i2) / a
    out[5] = sc1 * (i1 - s * u0) / a


def odd_power_moments(a, b, s, double p):
    a_arr, b_arr, s_arr = np.broadcast_arrays(
        np.atleast_1d(np.asarray(a, dtype=np.float64)),
        np.atleast_1d(np.asarray(b, dtype=np.float64)),
        np.atleast_1d(np.asarray(s, dtype=np.float64)),
    )
    cdef const double[::1] av = np.ascontiguousarray(a_arr.ravel())
    cdef const double[::1] bv = np.ascontiguousarray(b_arr.ravel())
    cdef const double[::1] sv = np.ascontiguousarray(s_arr.ravel())
    cdef Py_ssize_t n = av.shape[0]
    out_arr = np.empty((n, 6))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i
    for i in range(n):
        _moments(av[i], bv[i], sv[i], p, &out[i, 0])
    return out_arr
