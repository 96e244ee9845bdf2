"""Optimal splines without a linear reduction.

Two solvers live here:

* :func:`solve_alpha` for the double integrator with process density
  ``exp(-(v/sigma)^(2 alpha)/2)``: segments are closed form, only the
  junction equations are solved, by damped Newton with an analytic Jacobian.
* :func:`solve_collocation` for general systems: ``x`` and ``lambda`` are
  polynomials through Gauss-Lobatto nodes on every interval, the state and
  costate ODEs are imposed at the interior Gauss-Legendre points and the
  junction conditions at the knots; the sparse system is solved by damped
  Newton and accepted after one mesh doubling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import legendre
from scipy import sparse
from scipy.sparse import linalg as splinalg

from . import tolerances
from .kernels import odd_power_moments
from .model import MeasurementSet, ModelError, StochasticSystem
from .spline import (AlphaSegment, KnotValues, PolynomialSegment, Spline,
                     lobatto_nodes)


class NewtonError(RuntimeError):
    """Newton iteration failed; carries the best residual and the history."""

    def __init__(self, message, best_residual, history):
        super().__init__(message)
        self.best_residual = best_residual
        self.history = list(history)


@dataclass
class NewtonResult:
    u: np.ndarray
    residual: float
    iterations: int
    history: list = field(default_factory=list)


def newton(fun: Callable, u0, solve: Callable, tol: float = tolerances.NEWTON_TOL,
           max_iter: int = tolerances.NEWTON_MAX_ITER,
           max_halvings: int = tolerances.NEWTON_MAX_HALVINGS) -> NewtonResult:
    """Damped Newton on ``F(u) = 0``.

    ``fun(u)`` returns ``(F, J)``; ``solve(J, F)`` returns the step ``J^-1 F``.
    Steps are halved until the 2-norm of the residual decreases. Stops when
    ``max|F| <= tol`` or when a full step no longer changes ``u`` at working
    precision.
    """
    u = np.array(u0, dtype=float)
    F, J = fun(u)
    history = [float(np.max(np.abs(F)))]
    for it in range(max_iter + 1):
        if history[-1] <= tol:
            return NewtonResult(u, history[-1], it, history)
        if it == max_iter:
            break
        try:
            step = solve(J, F)
        except (np.linalg.LinAlgError, RuntimeError) as exc:
            raise NewtonError(f"singular Newton system: {exc}", min(history), history) from None
        if not np.all(np.isfinite(step)):
            raise NewtonError("non-finite Newton step", min(history), history)
        norm0 = np.linalg.norm(F)
        lam = 1.0
        for _ in range(max_halvings + 1):
            trial = u - lam * step
            Ft, Jt = fun(trial)
            if np.all(np.isfinite(Ft)) and np.linalg.norm(Ft) < norm0:
                break
            lam *= 0.5
        else:
            # no decrease: the iterate is at the precision floor or stuck
            if np.max(np.abs(step)) <= 1e-12 * (1.0 + np.max(np.abs(u))):
                return NewtonResult(u, history[-1], it, history)
            raise NewtonError(
                f"line search failed after {max_halvings} halvings "
                f"(residual {history[-1]:.3e})", min(history), history)
        u, F, J = trial, Ft, Jt
        history.append(float(np.max(np.abs(F))))
        if lam == 1.0 and np.max(np.abs(step)) <= 1e-14 * (1.0 + np.max(np.abs(u))):
            return NewtonResult(u, history[-1], it + 1, history)
    raise NewtonError(f"Newton did not converge in {max_iter} iterations "
                      f"(best residual {min(history):.3e})", min(history), history)


def _dense_solve(J, F):
    return np.linalg.solve(J, F)


def _sparse_solve(J, F):
    return splinalg.splu(sparse.csc_matrix(J)).solve(F)


# --------------------------------------------------------------------------
# alpha family


def _alpha_params(sys: StochasticSystem):
    if sys.name != "alpha" or "alpha" not in sys.params:
        raise ModelError("solve_alpha needs the alpha-family preset")
    alpha = int(sys.params["alpha"])
    if alpha < 1:
        raise ModelError("alpha must be >= 1")
    return alpha, float(sys.params["sigma_p"]), float(sys.params["sigma_m"])


def _alpha_residual(u, ms, deltas, alpha, sigma_p, sigma_m):
    K = ms.K
    p = 1.0 / (2 * alpha - 1)
    kappa = (sigma_p ** (2 * alpha) / alpha) ** p
    U = u.reshape(K, 4)
    a, b, c, d = U.T
    mom = np.vstack([odd_power_moments(a[k], b[k], np.array([deltas[k]]), p)
                     for k in range(K)])
    I1, I2, dI1a, dI1b, dI2a, dI2b = mom.T
    x1_end = d + c * deltas + kappa * I2
    x2_end = c + kappa * I1
    wts = ms.weights
    y = ms.values[:, 0]
    s2 = sigma_m ** 2
    n = 4 * K
    F = np.zeros(n)
    J = np.zeros((n, n))

    def col(k, i):
        return 4 * k + i

    row = 0
    for k in range(K - 1):
        F[row] = x1_end[k] - d[k + 1]
        J[row, col(k, 0)] = kappa * dI2a[k]
        J[row, col(k, 1)] = kappa * dI2b[k]
        J[row, col(k, 2)] = deltas[k]
        J[row, col(k, 3)] = 1.0
        J[row, col(k + 1, 3)] = -1.0
        F[row + 1] = x2_end[k] - c[k + 1]
        J[row + 1, col(k, 0)] = kappa * dI1a[k]
        J[row + 1, col(k, 1)] = kappa * dI1b[k]
        J[row + 1, col(k, 2)] = 1.0
        J[row + 1, col(k + 1, 2)] = -1.0
        row += 2
    for j in range(K + 1):
        r1, r2 = row, row + 1
        if j < K:
            F[r1] += -wts[j] * a[j]
            J[r1, col(j, 0)] += -wts[j]
            F[r2] += wts[j] * b[j]
            J[r2, col(j, 1)] += wts[j]
            F[r1] += (y[j] - d[j]) / s2
            J[r1, col(j, 3)] += -1.0 / s2
        else:
            k = K - 1
            F[r1] += (y[j] - x1_end[k]) / s2
            J[r1, col(k, 0)] += -kappa * dI2a[k] / s2
            J[r1, col(k, 1)] += -kappa * dI2b[k] / s2
            J[r1, col(k, 2)] += -deltas[k] / s2
            J[r1, col(k, 3)] += -1.0 / s2
        if j > 0:
            k = j - 1
            F[r1] += wts[k] * a[k]
            J[r1, col(k, 0)] += wts[k]
            F[r2] -= wts[k] * (a[k] * deltas[k] + b[k])
            J[r2, col(k, 0)] -= wts[k] * deltas[k]
            J[r2, col(k, 1)] -= wts[k]
        row += 2
    return F, J


def alpha_initial_guess(sys: StochasticSystem, ms: MeasurementSet) -> np.ndarray:
    """Stacked ``(a, b, c, d)`` per segment from the Gaussian (``alpha = 1``) spline."""
    from .linear import cubic_coefficients, solve_spline
    from .model import preset_double_integrator

    _, sigma_p, sigma_m = _alpha_params(sys)
    _, lgs = preset_double_integrator(sigma_p, sigma_m)
    base = solve_spline(lgs, ms)
    return np.array([cubic_coefficients(base, k) for k in range(ms.K)], dtype=float).ravel()


def solve_alpha(sys: StochasticSystem, ms: MeasurementSet, init=None,
                tol: float = tolerances.NEWTON_TOL) -> Spline:
    """Optimal spline of the alpha-family double integrator.

    Segment constants ``(a_k, b_k, c_k, d_k)`` are found by damped Newton on
    state continuity and the multiplier jump conditions. The starting point
    is the Gaussian spline unless ``init`` (a stacked ``4K`` vector) is given.
    """
    alpha, sigma_p, sigma_m = _alpha_params(sys)
    if ms.n_y != 1:
        raise ModelError("the alpha preset measures one component")
    deltas = np.diff(ms.times)
    u0 = alpha_initial_guess(sys, ms) if init is None else np.asarray(init, dtype=float)
    if u0.shape != (4 * ms.K,):
        raise ValueError(f"init must have {4 * ms.K} entries")
    res = newton(lambda u: _alpha_residual(u, ms, deltas, alpha, sigma_p, sigma_m),
                 u0, _dense_solve, tol=tol)
    U = res.u.reshape(ms.K, 4)
    segments = [AlphaSegment(float(ms.times[k]), float(ms.times[k + 1]), *map(float, U[k]),
                             alpha=alpha, sigma_p=sigma_p) for k in range(ms.K)]
    x = np.vstack([U[:, [3, 2]], segments[-1].x(ms.times[-1])[None]])
    lam_plus = np.vstack([[[-a, b] for a, b in U[:, :2]], [[0.0, 0.0]]])
    lam_minus = np.vstack([[[0.0, 0.0]]] + [s.lam(s.t_end)[None] for s in segments])
    w = ms.values[:, :1] - x[:, :1]
    K = ms.K
    knots = KnotValues(x=x, xdot=np.column_stack([x[:, 1], np.zeros(K + 1)]),
                       v=np.zeros((K + 1, 1)), w=w, lam=np.zeros((K + 1, 2)),
                       eta=w / sigma_m ** 2, lam_minus=lam_minus, lam_plus=lam_plus)
    model = {"alpha": alpha, "sigma_p": sigma_p, "sigma_m": sigma_m}
    return Spline("alpha", ms.times, segments, knots, model,
                  {"iterations": res.iterations, "residual": res.residual,
                   "history": res.history})


# --------------------------------------------------------------------------
# collocation


def _gauss_points(m: int) -> np.ndarray:
    pts, _ = legendre.leggauss(m - 1)
    return pts


def _interp_matrices(m: int, where: np.ndarray):
    """Value and d/dtau matrices mapping Lobatto node values to ``where``."""
    nodes = lobatto_nodes(m)
    vander_inv = np.linalg.inv(legendre.legvander(nodes, m - 1))
    E = legendre.legvander(where, m - 1) @ vander_inv
    dV = np.column_stack([legendre.legval(where, legendre.legder(np.eye(m)[i]))
                          for i in range(m)])
    return E, dV @ vander_inv


class _Layout:
    """Index bookkeeping for the collocation unknown vector."""

    def __init__(self, sys: StochasticSystem, K: int, m: int, explicit_v: bool):
        self.n, self.nv, self.nw, self.ny = sys.n_x, sys.n_v, sys.n_w, sys.n_y
        self.K, self.m, self.explicit_v = K, m, explicit_v
        self.seg_size = 2 * self.n * m + (self.nv * (m - 1) if explicit_v else 0)
        self.knot_size = 2 * self.n + self.nv + self.nw + self.ny
        self.knot_base = K * self.seg_size
        self.size = self.knot_base + (K + 1) * self.knot_size

    def X(self, k):
        b = k * self.seg_size
        return np.arange(b, b + self.n * self.m).reshape(self.m, self.n)

    def L(self, k):
        b = k * self.seg_size + self.n * self.m
        return np.arange(b, b + self.n * self.m).reshape(self.m, self.n)

    def V(self, k):
        b = k * self.seg_size + 2 * self.n * self.m
        return np.arange(b, b + self.nv * (self.m - 1)).reshape(self.m - 1, self.nv)

    def knot(self, j):
        b = self.knot_base + j * self.knot_size
        n, nv, nw, ny = self.n, self.nv, self.nw, self.ny
        idx = np.arange(b, b + self.knot_size)
        return {"xdot": idx[:n], "v": idx[n:n + nv], "w": idx[n + nv:n + nv + nw],
                "lam": idx[n + nv + nw:2 * n + nv + nw], "eta": idx[2 * n + nv + nw:]}


def _fd_jacobian(fun, z, h=tolerances.FD_STEP):
    z = np.asarray(z, dtype=float)
    cols = []
    for i in range(z.size):
        step = h * max(1.0, abs(z[i]))
        zp, zm = z.copy(), z.copy()
        zp[i] += step
        zm[i] -= step
        cols.append((fun(zp) - fun(zm)) / (2.0 * step))
    return np.column_stack(cols)


class _Collocation:
    def __init__(self, sys: StochasticSystem, ms: MeasurementSet, m: int):
        if m < 3:
            raise ValueError("collocation needs m >= 3 nodes per interval")
        if ms.n_y != sys.n_y:
            raise ModelError(f"measurements have n_y = {ms.n_y}, system expects {sys.n_y}")
        self.sys, self.ms, self.m = sys, ms, m
        self.explicit_v = sys.inv_dlog_rho_v is None
        self.lay = _Layout(sys, ms.K, m, self.explicit_v)
        self.gauss = _gauss_points(m)
        self.E, self.Dtau = _interp_matrices(m, self.gauss)
        self.deltas = np.diff(ms.times)
        self.wts = ms.weights

    # in-segment noise from the costate (elimination path)
    def v_of_lam(self, t, lam):
        sys = self.sys
        B = np.atleast_2d(sys.dnu_dv(t, np.zeros(sys.n_v)))
        return np.atleast_1d(sys.inv_dlog_rho_v(t, -B.T @ lam))

    def point_fun(self, t, z):
        """Required ``(xdot, lamdot[, r21])`` at one Gauss point from ``(x, lam[, v])``."""
        sys, n = self.sys, self.lay.n
        x, lam = z[:n], z[n:2 * n]
        v = z[2 * n:] if self.explicit_v else self.v_of_lam(t, lam)
        xd = np.atleast_1d(sys.f(t, x)) + np.atleast_1d(sys.nu(t, v))
        ld = -np.atleast_2d(sys.df_dx(t, x)).T @ lam
        out = [xd, ld]
        if self.explicit_v:
            out.append(np.atleast_1d(sys.dlog_rho_v_dv(t, v))
                       + np.atleast_2d(sys.dnu_dv(t, v)).T @ lam)
        return np.concatenate(out)

    def knot_fun(self, j, z):
        """``r24..r29`` at knot ``j`` from local variables."""
        sys, lay = self.sys, self.lay
        n, nv, nw, ny = lay.n, lay.nv, lay.nw, lay.ny
        t = self.ms.times[j]
        K = lay.K
        x, lp, lm = z[:n], z[n:2 * n], z[2 * n:3 * n]
        o = 3 * n
        xdot = z[o:o + n]
        v = z[o + n:o + n + nv]
        w = z[o + n + nv:o + n + nv + nw]
        lam = z[o + n + nv + nw:o + 2 * n + nv + nw]
        eta = z[o + 2 * n + nv + nw:]
        w_plus = self.wts[min(j, K - 1)]
        w_minus = self.wts[max(j - 1, 0)]
        r24 = np.atleast_1d(sys.dlog_rho_v_dv(t, v)) + np.atleast_2d(sys.dnu_dv(t, v)).T @ lam
        r25 = np.atleast_1d(sys.dlog_rho_w_dw(t, w)) + np.atleast_2d(sys.dxi_dw(t, w)).T @ eta
        r26 = lam - np.atleast_2d(sys.dg_dxdot(t, xdot)).T @ eta
        r27 = (np.atleast_2d(sys.df_dx(t, x)).T @ lam + np.atleast_2d(sys.dh_dx(t, x)).T @ eta
               + w_plus * lp - w_minus * lm)
        r28 = (self.ms.values[j] - np.atleast_1d(sys.g(t, xdot)) - np.atleast_1d(sys.h(t, x))
               - np.atleast_1d(sys.xi(t, w)))
        r29 = xdot - np.atleast_1d(sys.f(t, x)) - np.atleast_1d(sys.nu(t, v))
        return np.concatenate([r24, r25, r26, r27, r28, r29])

    def knot_vars(self, j):
        """Global indices of the knot-local vector; ``-1`` marks a fixed zero."""
        lay = self.lay
        K, n, m = lay.K, lay.n, lay.m
        x = lay.X(j)[0] if j < K else lay.X(K - 1)[m - 1]
        lp = lay.L(j)[0] if j < K else np.full(n, -1)
        lm = lay.L(j - 1)[m - 1] if j > 0 else np.full(n, -1)
        kv = lay.knot(j)
        return np.concatenate([x, lp, lm, kv["xdot"], kv["v"], kv["w"], kv["lam"], kv["eta"]])

    def residual(self, u):
        return self._assemble(u, jac=True)

    def _assemble(self, u, jac):
        lay, m, n = self.lay, self.m, self.lay.n
        times = self.ms.times
        F = []
        rows, cols, vals = [], [], []
        r0 = 0
        for k in range(lay.K):
            Xi, Li = lay.X(k), lay.L(k)
            Xk, Lk = u[Xi], u[Li]
            scale = 2.0 / self.deltas[k]
            Xg, Lg = self.E @ Xk, self.E @ Lk
            dXg, dLg = scale * (self.Dtau @ Xk), scale * (self.Dtau @ Lk)
            tg = times[k] + 0.5 * (self.gauss + 1.0) * self.deltas[k]
            if self.explicit_v:
                Vi = lay.V(k)
                Vg = u[Vi]
            for i, t in enumerate(tg):
                z = np.concatenate([Xg[i], Lg[i]] + ([Vg[i]] if self.explicit_v else []))
                req = self.point_fun(t, z)
                res = np.concatenate([dXg[i] - req[:n], dLg[i] - req[n:2 * n]]
                                     + ([req[2 * n:]] if self.explicit_v else []))
                F.append(res)
                if jac:
                    Jp = _fd_jacobian(lambda zz: self.point_fun(t, zz), z)
                    nr = res.size
                    # ODE rows are (derivative - required); the explicit-v row is required itself
                    Jp[:2 * n] *= -1.0
                    # d res / d (x_g, lam_g, v_g): identity on the derivative part minus Jp
                    # chained through the value interpolation row E[i] and Dtau[i]
                    for c in range(n):
                        for node in range(m):
                            # x-node column
                            col_x = Xi[node, c]
                            col_l = Li[node, c]
                            coeff_e = self.E[i, node]
                            coeff_d = scale * self.Dtau[i, node]
                            col_vals_x = Jp[:, c] * coeff_e
                            col_vals_x[c] += coeff_d
                            col_vals_l = Jp[:, n + c] * coeff_e
                            col_vals_l[n + c] += coeff_d
                            rows.extend(range(r0, r0 + nr))
                            cols.extend([col_x] * nr)
                            vals.extend(col_vals_x)
                            rows.extend(range(r0, r0 + nr))
                            cols.extend([col_l] * nr)
                            vals.extend(col_vals_l)
                    if self.explicit_v:
                        for c in range(lay.nv):
                            rows.extend(range(r0, r0 + nr))
                            cols.extend([Vi[i, c]] * nr)
                            vals.extend(Jp[:, 2 * n + c])
                r0 += res.size
        for j in range(lay.K + 1):
            idx = self.knot_vars(j)
            z = np.where(idx >= 0, u[np.maximum(idx, 0)], 0.0)
            res = self.knot_fun(j, z)
            F.append(res)
            if jac:
                Jk = _fd_jacobian(lambda zz: self.knot_fun(j, zz), z)
                for c, g in enumerate(idx):
                    if g < 0:
                        continue
                    rows.extend(range(r0, r0 + res.size))
                    cols.extend([g] * res.size)
                    vals.extend(Jk[:, c])
            r0 += res.size
        for k in range(1, lay.K):
            a, b = lay.X(k - 1)[m - 1], lay.X(k)[0]
            F.append(u[a] - u[b])
            if jac:
                rows.extend(range(r0, r0 + n))
                cols.extend(a)
                vals.extend([1.0] * n)
                rows.extend(range(r0, r0 + n))
                cols.extend(b)
                vals.extend([-1.0] * n)
            r0 += n
        F = np.concatenate(F)
        if r0 != lay.size:
            raise AssertionError(f"collocation system is not square ({r0} x {lay.size})")
        J = sparse.csc_matrix((vals, (rows, cols)), shape=(r0, lay.size)) if jac else None
        return F, J

    # -------------------------------------------------------- packing

    def pack(self, spline: Spline) -> np.ndarray:
        """Unknown vector sampled from any spline-like candidate."""
        lay, m = self.lay, self.m
        u = np.zeros(lay.size)
        nodes = lobatto_nodes(m)
        times = self.ms.times
        for k in range(lay.K):
            seg = spline.segments[k]
            t = times[k] + 0.5 * (nodes + 1.0) * self.deltas[k]
            u[lay.X(k)] = np.reshape(seg.x(t), (m, lay.n))
            u[lay.L(k)] = np.reshape(seg.lam(t), (m, lay.n))
            if self.explicit_v:
                tg = times[k] + 0.5 * (self.gauss + 1.0) * self.deltas[k]
                u[lay.V(k)] = np.reshape(seg.v(tg), (m - 1, lay.nv))
        kv = spline.knots
        for j in range(lay.K + 1):
            idx = lay.knot(j)
            u[idx["xdot"]] = kv.xdot[j]
            u[idx["v"]] = kv.v[j]
            u[idx["w"]] = kv.w[j]
            u[idx["lam"]] = kv.lam[j]
            u[idx["eta"]] = kv.eta[j]
        return u

    def unpack(self, u, info) -> Spline:
        lay, m, n = self.lay, self.m, self.lay.n
        times = self.ms.times
        nodes = lobatto_nodes(m)
        segments = []
        for k in range(lay.K):
            X, L = u[lay.X(k)], u[lay.L(k)]
            t = times[k] + 0.5 * (nodes + 1.0) * self.deltas[k]
            if self.explicit_v:
                # V lives at the Gauss points: extend its degree m-2 interpolant
                gv = legendre.legvander(self.gauss, m - 2)
                coef = np.linalg.solve(gv, u[lay.V(k)])
                V = legendre.legval(nodes, coef).T.reshape(m, lay.nv)
            else:
                V = np.array([self.v_of_lam(tt, L[i]) for i, tt in enumerate(t)])
            segments.append(PolynomialSegment(float(times[k]), float(times[k + 1]), nodes,
                                              X, L, V))
        x = np.vstack([u[lay.X(k)][0] for k in range(lay.K)] + [u[lay.X(lay.K - 1)][m - 1]])
        lam_plus = np.vstack([u[lay.L(k)][0] for k in range(lay.K)] + [np.zeros(n)])
        lam_minus = np.vstack([np.zeros(n)] + [u[lay.L(k)][m - 1] for k in range(lay.K)])
        fields = {key: np.vstack([u[lay.knot(j)[key]] for j in range(lay.K + 1)])
                  for key in ("xdot", "v", "w", "lam", "eta")}
        knots = KnotValues(x=x, lam_minus=lam_minus, lam_plus=lam_plus, **fields)
        model = {"system": self.sys.name, "params": {k: v for k, v in self.sys.params.items()},
                 "m": m}
        return Spline("polynomial", times, segments, knots, model, info)


def initial_guess(sys: StochasticSystem, ms: MeasurementSet) -> Spline:
    """Piecewise-linear starting trajectory with ``lambda = 0``.

    Components observed through ``h`` come from a least-squares inversion of
    the measurement Jacobian at the origin; every unobserved component is the
    finite-difference derivative of the component before it. Knot values
    follow from the point equations with zero noise and zero multipliers.
    """
    K, n = ms.K, sys.n_x
    t0 = ms.times[0]
    C = np.atleast_2d(sys.dh_dx(t0, np.zeros(n)))
    X = np.zeros((K + 1, n))
    observed = np.any(C != 0, axis=0)
    if observed.any():
        X[:, observed] = np.linalg.lstsq(C[:, observed], ms.values.T, rcond=None)[0].T
    for i in range(n):
        if not observed[i] and i > 0:
            X[:, i] = np.gradient(X[:, i - 1], ms.times)
    segs = []
    for k in range(K):
        nodes = np.array([-1.0, 1.0])
        segs.append(PolynomialSegment(float(ms.times[k]), float(ms.times[k + 1]), nodes,
                                      X[k:k + 2], np.zeros((2, n)), np.zeros((2, sys.n_v))))
    xdot = np.array([np.atleast_1d(sys.f(t, x)) for t, x in zip(ms.times, X)])
    D = np.atleast_2d(sys.dxi_dw(t0, np.zeros(sys.n_w)))
    resid = np.array([ms.values[j] - np.atleast_1d(sys.h(t, X[j])) - np.atleast_1d(sys.g(t, xdot[j]))
                      for j, t in enumerate(ms.times)])
    w = np.linalg.lstsq(D, resid.T, rcond=None)[0].T
    eta = np.zeros((K + 1, sys.n_y))
    knots = KnotValues(x=X, xdot=xdot, v=np.zeros((K + 1, sys.n_v)), w=w,
                       lam=np.zeros((K + 1, n)), eta=eta,
                       lam_minus=np.zeros((K + 1, n)), lam_plus=np.zeros((K + 1, n)))
    return Spline("polynomial", ms.times, segs, knots, {"system": sys.name, "m": 2},
                  {"initial_guess": True})


def _solve_at(sys, ms, m, start: Spline):
    col = _Collocation(sys, ms, m)
    res = newton(col.residual, col.pack(start), _sparse_solve)
    return col.unpack(res.u, {"iterations": res.iterations, "residual": res.residual,
                              "history": res.history, "m": m})


def solve_collocation(sys: StochasticSystem, ms: MeasurementSet, init: Optional[Spline] = None,
                      m: int = 5, refine: bool = True) -> Spline:
    """Optimal spline by Gauss-Lobatto collocation and damped Newton.

    ``init`` is any spline-like candidate (defaults to :func:`initial_guess`).
    With ``refine`` the problem is re-solved with ``2 m`` nodes, started from
    the coarse solution, and accepted only if no knot state moves by more
    than the mesh-refinement tolerance.
    """
    start = initial_guess(sys, ms) if init is None else init
    coarse = _solve_at(sys, ms, m, start)
    if not refine:
        return coarse
    fine = _solve_at(sys, ms, 2 * m, coarse)
    change = float(np.max(np.abs(fine.knots.x - coarse.knots.x)))
    if not change <= tolerances.MESH_REFINE_TOL:
        raise NewtonError(f"mesh refinement moved knot states by {change:.3e}",
                          change, fine.info["history"])
    info = dict(fine.info)
    info.update({"coarse_iterations": coarse.info["iterations"], "refine_change": change,
                 "coarse_m": m})
    return Spline(fine.kind, fine.times, fine.segments, fine.knots, fine.model, info)
