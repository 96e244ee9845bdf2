"""Pure-Python reference implementations of the hot kernels.

Every function here has a Cython twin in ``_ckernels.pyx`` with the same
signature and results to rounding.
"""

import math

import numpy as np

_SERIES_RATIO = 0.1
_SERIES_TERMS = 40


def linear_em(A, B, x0, noise, dt):
    """Euler-Maruyama recurrence ``x <- x + dt (A x + B v_i)``.

    ``noise`` holds the already-scaled per-step inputs ``v_i`` (shape N x n_v).
    Returns the (N+1) x n_x state array.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    noise = np.asarray(noise, dtype=float)
    n_steps = noise.shape[0]
    out = np.empty((n_steps + 1, A.shape[0]))
    x = np.array(x0, dtype=float)
    out[0] = x
    for i in range(n_steps):
        x = x + dt * (A @ x + B @ noise[i])
        out[i + 1] = x
    return out


def paper_verlet(x0, accel, dt):
    """Position/velocity update with per-step acceleration draws.

    r <- r + rdot dt + a dt^2 / 2,  rdot <- rdot + a dt.
    """
    accel = np.asarray(accel, dtype=float)
    n_steps = accel.shape[0]
    out = np.empty((n_steps + 1, 2))
    r, rd = float(x0[0]), float(x0[1])
    out[0, 0] = r
    out[0, 1] = rd
    half_dt2 = 0.5 * dt * dt
    for i in range(n_steps):
        a = accel[i]
        r = r + rd * dt + a * half_dt2
        rd = rd + a * dt
        out[i + 1, 0] = r
        out[i + 1, 1] = rd
    return out


def _oddpow(z, e):
    if z == 0.0:
        return 0.0
    return math.copysign(abs(z) ** e, z)


def _series(q, s, e, shift):
    # sum_j binom(e, j) q^j s^(j+shift) / (j+shift)
    total = 0.0
    coef = 1.0
    qs = 1.0
    for j in range(_SERIES_TERMS):
        term = coef * qs * s ** (j + shift) / (j + shift)
        total += term
        if abs(term) <= 1e-18 * abs(total):
            break
        coef *= (e - j) / (j + 1)
        qs *= q
    return total


def _moments_scalar(a, b, s, p):
    if s == 0.0:
        return (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    if b != 0.0 and abs(a * s) < _SERIES_RATIO * abs(b):
        q = a / b
        c0 = _oddpow(b, p)
        c1 = p * abs(b) ** (p - 1.0)
        s0 = _series(q, s, p, 1)
        s1 = _series(q, s, p, 2)
        d0 = _series(q, s, p - 1.0, 1)
        d1 = _series(q, s, p - 1.0, 2)
        d2 = _series(q, s, p - 1.0, 3)
        i1 = c0 * s0
        i2 = c0 * (s * s0 - s1)
        di1_db = c1 * d0
        di1_da = c1 * d1
        di2_db = c1 * (s * d0 - d1)
        di2_da = c1 * (s * d1 - d2)
        return (i1, i2, di1_da, di1_db, di2_da, di2_db)
    if a == 0.0:
        # b == 0 as well: integrand vanishes identically
        if p == 1.0:
            return (0.0, 0.0, 0.5 * s * s, s, s ** 3 / 6.0, 0.5 * s * s)
        inf = math.inf
        return (0.0, 0.0, inf, inf, inf, inf)
    # u is homogeneous of degree p in (a, b): rescale so max(|a s|, |b|) = 1
    m = max(abs(a) * s, abs(b))
    a, b = a / m, b / m
    sc0, sc1 = m ** p, m ** (p - 1.0)
    z0 = b
    z1 = b + a * s
    u0 = _oddpow(z0, p)
    u1 = _oddpow(z1, p)
    k1 = 1.0 / (p + 1.0)
    k2 = 1.0 / ((p + 1.0) * (p + 2.0))
    U1_0 = abs(z0) ** (p + 1.0) * k1
    U1_1 = abs(z1) ** (p + 1.0) * k1
    U2_0 = _oddpow(z0, p + 2.0) * k2
    U2_1 = _oddpow(z1, p + 2.0) * k2
    i1 = (U1_1 - U1_0) / a
    i2 = (U2_1 - U2_0 - a * s * U1_0) / (a * a)
    di1_db = (u1 - u0) / a
    di1_da = (s * u1 - i1) / a
    di2_db = (i1 - s * u0) / a
    di2_da = (s * i1 - 2.0 * i2) / a
    return (sc0 * i1, sc0 * i2, sc1 * di1_da, sc1 * di1_db, sc1 * di2_da, sc1 * di2_db)


def odd_power_moments(a, b, s, p):
    """Integrals of ``u(r) = sign(b + a r) |b + a r|^p`` over ``[0, s]``.

    Returns a (n, 6) array with columns
    ``I1, I2, dI1/da, dI1/db, dI2/da, dI2/db`` where
    ``I1 = int_0^s u``, ``I2 = int_0^s (s - r) u``.
    Inputs broadcast to 1-D arrays.
    """
    a, b, s = np.broadcast_arrays(
        np.atleast_1d(np.asarray(a, dtype=float)),
        np.atleast_1d(np.asarray(b, dtype=float)),
        np.atleast_1d(np.asarray(s, dtype=float)),
    )
    out = np.empty((a.size, 6))
    p = float(p)
    for i, (ai, bi, si) in enumerate(zip(a.ravel(), b.ravel(), s.ravel())):
        out[i] = _moments_scalar(float(ai), float(bi), float(si), p)
    return out
