"""Closed-form optimal splines for linear dynamics with Gaussian noises.

On each interval the multiplier and state are

    lambda(t) = exp(-A^T s) c_lambda,
    x(t)      = exp(A s) [G(s) c_lambda + c_x],
    G(s)      = int_0^s exp(-A r) B Q B^T exp(-A^T r) dr,

so the whole spline is fixed by ``2 n_x K`` constants. They solve a square
linear system made of state continuity at interior knots and the multiplier
jump at every knot, with the measurement multiplier eliminated through
``eta_k = (D R D^T)^{-1} (y_k - C x_k)``.
"""

from __future__ import annotations

import numpy as np
from scipy import linalg

from .model import LinearGaussianSystem, MeasurementSet, ModelError
from .spline import KnotValues, LinearModel, LinearSegment, Spline


class DegenerateSystemError(np.linalg.LinAlgError):
    """The junction system is singular to working precision."""

    def __init__(self, message, condition):
        super().__init__(message)
        self.condition = condition


def segment_blocks(A, B, Q, delta: float):
    """``(Phi, P, Psi)`` blocks of ``exp(H delta)``, ``H = [[A, BQB^T], [0, -A^T]]``.

    ``Phi = e^{A delta}``, ``Psi = e^{-A^T delta}`` and ``P = Phi G(delta)``.
    """
    if delta < 0:
        raise ValueError("delta must be >= 0")
    model = LinearModel(A, B, Q)
    E = model.propagator(delta)
    if not np.all(np.isfinite(E)):
        raise FloatingPointError(f"matrix exponential overflowed for delta = {delta}")
    n = model.n_x
    return E[:n, :n], E[:n, n:], E[n:, n:]


def _sym(G):
    return 0.5 * (G + G.T)


def segment_gramian(A, B, Q, delta: float) -> np.ndarray:
    """``int_0^delta e^{-As} B Q B^T e^{-A^T s} ds`` by the Van Loan block exponential."""
    _, P, Psi = segment_blocks(A, B, Q, delta)
    return _sym(Psi.T @ P)


def _lgs_of(system) -> LinearGaussianSystem:
    if isinstance(system, LinearGaussianSystem):
        return system
    lgs = getattr(system, "linear", None)
    if lgs is None:
        raise ModelError("a linear-Gaussian system is required")
    return lgs


def _build(lgs: LinearGaussianSystem, ms: MeasurementSet):
    if ms.n_y != lgs.n_y:
        raise ModelError(f"measurements have n_y = {ms.n_y}, system expects {lgs.n_y}")
    n, K = lgs.n_x, ms.K
    model = LinearModel(lgs.A, lgs.B, lgs.Q)
    deltas = np.diff(ms.times)
    blocks = []
    for d in deltas:
        E = model.propagator(d)
        if not np.all(np.isfinite(E)):
            raise FloatingPointError(f"matrix exponential overflowed for delta = {d}")
        blocks.append((E[:n, :n], E[:n, n:], E[n:, n:]))
    S_inv = np.linalg.inv(lgs.S)
    CtSi = lgs.C.T @ S_inv
    CtSiC = CtSi @ lgs.C
    wts = ms.weights

    size = 2 * n * K
    M = np.zeros((size, size))
    b = np.zeros(size)

    def lam_col(k):
        return slice(2 * n * k, 2 * n * k + n)

    def x_col(k):
        return slice(2 * n * k + n, 2 * n * (k + 1))

    row = 0
    # state continuity at interior knots: P_k c_lam_k + Phi_k c_x_k - c_x_{k+1} = 0
    for k in range(K - 1):
        Phi, P, _ = blocks[k]
        rows = slice(row, row + n)
        M[rows, lam_col(k)] = P
        M[rows, x_col(k)] = Phi
        M[rows, x_col(k + 1)] = -np.eye(n)
        row += n
    # multiplier jump at every knot:
    # wt_k lam(t_k+) - wt_{k-1} lam(t_k-) - C^T S^-1 C x_k = -C^T S^-1 y_k
    for j in range(K + 1):
        rows = slice(row, row + n)
        if j < K:
            M[rows, lam_col(j)] += wts[j] * np.eye(n)
        if j > 0:
            _, _, Psi = blocks[j - 1]
            M[rows, lam_col(j - 1)] -= wts[j - 1] * Psi
        if j < K:
            M[rows, x_col(j)] -= CtSiC
        else:
            Phi, P, _ = blocks[K - 1]
            M[rows, lam_col(K - 1)] -= CtSiC @ P
            M[rows, x_col(K - 1)] -= CtSiC @ Phi
        b[rows] = -CtSi @ ms.values[j]
        row += n
    return M, b, model, blocks, S_inv


def assemble_junction_system(system, ms: MeasurementSet):
    """Square system ``M u = b`` for ``u = (c_lambda_0, c_x_0, ..., c_lambda_{K-1}, c_x_{K-1})``."""
    M, b, *_ = _build(_lgs_of(system), ms)
    return M, b


def _solve_dense(M, b):
    # row equilibration keeps continuity rows and S^-1-scaled jump rows comparable
    scale = np.abs(M).max(axis=1)
    scale[scale == 0] = 1.0
    Ms = M / scale[:, None]
    cond = np.linalg.cond(Ms, 1)
    if not np.isfinite(cond) or cond > 1.0 / np.finfo(float).eps:
        raise DegenerateSystemError(
            f"degenerate junction system (condition estimate {cond:.3e})", cond)
    lu = linalg.lu_factor(Ms)
    return linalg.lu_solve(lu, b / scale), cond


def solve_spline(system, ms: MeasurementSet) -> Spline:
    """Optimal spline for a linear-Gaussian system (or a system wrapping one)."""
    lgs = _lgs_of(system)
    M, b, model, blocks, S_inv = _build(lgs, ms)
    u, cond = _solve_dense(M, b)
    n, K = lgs.n_x, ms.K
    u = u.reshape(K, 2, n)
    segments = [LinearSegment(ms.times[k], ms.times[k + 1], u[k, 0], u[k, 1], model,
                              Phi=blocks[k][0], P=blocks[k][1], Psi=blocks[k][2],
                              G=_sym(blocks[k][2].T @ blocks[k][1]))
                for k in range(K)]
    x = np.vstack([u[:, 1], segments[-1].end_state()[None]])
    lam_plus = np.vstack([u[:, 0], np.zeros((1, n))])
    lam_minus = np.vstack([np.zeros((1, n))] + [s.end_lambda()[None] for s in segments])
    eta = (ms.values - x @ lgs.C.T) @ S_inv.T
    w = eta @ (lgs.R @ lgs.D.T).T
    knots = KnotValues(
        x=x,
        xdot=x @ lgs.A.T,
        v=np.zeros((K + 1, lgs.n_v)),
        w=w,
        lam=np.zeros((K + 1, n)),
        eta=eta,
        lam_minus=lam_minus,
        lam_plus=lam_plus,
    )
    model_dict = model.to_dict()
    model_dict.update({"C": lgs.C.tolist(), "D": lgs.D.tolist(), "R": lgs.R.tolist()})
    return Spline("linear-gaussian", ms.times, segments, knots, model_dict,
                  {"condition": cond})


def is_double_integrator(spline: Spline) -> bool:
    m = spline.model
    try:
        A, B = np.array(m["A"]), np.array(m["B"])
    except KeyError:
        return False
    return (A.shape == (2, 2) and np.array_equal(A, [[0.0, 1.0], [0.0, 0.0]])
            and np.array_equal(B, [[0.0], [1.0]]))


def cubic_coefficients(spline: Spline, k: int):
    """``(a_k, b_k, c_k, d_k)`` of segment ``k`` of a double-integrator spline.

    ``x1 = a sigma^2 s^3/6 + b sigma^2 s^2/2 + c s + d``, ``v = sigma^2 (a s + b)``
    and ``lambda = (-a, a s + b)`` with ``s = t - t_k``.
    """
    if spline.kind != "linear-gaussian" or not is_double_integrator(spline):
        raise ModelError("cubic coefficients need a double-integrator spline")
    seg = spline.segments[k]
    lam1, lam2 = seg.c_lambda
    return -lam1, lam2, seg.c_x[1], seg.c_x[0]


def cubic_from_coefficients(a, b, c, d, sigma_p, s):
    """Evaluate the cubic basis: returns ``(x1, x2, lambda1, lambda2)`` at local ``s``."""
    s = np.asarray(s, dtype=float)
    sp2 = sigma_p ** 2
    x1 = a * sp2 * s ** 3 / 6 + b * sp2 * s ** 2 / 2 + c * s + d
    x2 = a * sp2 * s ** 2 / 2 + b * sp2 * s + c
    return x1, x2, -a + 0 * s, a * s + b
