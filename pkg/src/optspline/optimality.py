"""Numeric residuals of the first-order optimality system.

Inside each open interval a candidate must satisfy

* ``r21 = dln rho_v/dv + (dnu/dv)^T lambda``
* ``r22 = lambdadot + (df/dx)^T lambda``
* ``r23 = xdot - f(x) - nu(v)``

and at every knot ``t_k``

* ``r24 = dln rho_v/dv(v_k) + (dnu/dv)^T lambda_k``
* ``r25 = dln rho_w/dw(w_k) + (dxi/dw)^T eta_k``
* ``r26 = lambda_k - (dg/dxdot)^T eta_k``
* ``r27 = (df/dx)^T lambda_k + (dh/dx)^T eta_k + wt_k lambda(t_k+) - wt_{k-1} lambda(t_k-)``
* ``r28 = y_k - g(xdot_k) - h(x_k) - xi(w_k)``
* ``r29 = xdot_k - f(x_k) - nu(v_k)``

where ``wt_k = 1 / (t_{k+1} - t_k)`` is the sampling-frequency weight. The
knot value ``xdot_k`` is a separate point value, not a segment limit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import tolerances
from .model import MeasurementSet, StochasticSystem
from .spline import KnotValues

INTERVAL_KEYS = ("r21", "r22", "r23")
JUNCTION_KEYS = ("r24", "r25", "r26", "r27", "r28", "r29")


@dataclass(frozen=True)
class PathSegment:
    """Callable paths on one open interval; derivatives are optional."""

    x: Callable
    lam: Callable
    v: Callable
    xdot: Optional[Callable] = None
    lamdot: Optional[Callable] = None


@dataclass(frozen=True)
class Candidate:
    """Generic candidate solution; :class:`~optspline.spline.Spline` has the same shape."""

    times: np.ndarray
    segments: Sequence
    knots: KnotValues


def _vec(a) -> np.ndarray:
    return np.atleast_1d(np.asarray(a, dtype=float))


def _interval_of(times, t) -> int:
    k = int(np.searchsorted(times, t, side="right")) - 1
    if k < 0 or k >= len(times) - 1 or not times[k] < t < times[k + 1]:
        raise ValueError(f"t = {t} is not strictly inside an inter-measurement interval")
    return k


def _central(fun, t, h):
    return (_vec(fun(t + h)) - _vec(fun(t - h))) / (2.0 * h)


def interval_residuals(sys: StochasticSystem, cand, t: float, derivatives: str = "auto"):
    """``(r21, r22, r23)`` at a time strictly between two knots.

    ``derivatives="auto"`` uses the segment's analytic derivatives when it
    provides them and central differences (step 1e-6) otherwise; ``"fd"``
    always differences.
    """
    k = _interval_of(np.asarray(cand.times), t)
    seg = cand.segments[k]
    x, lam, v = _vec(seg.x(t)), _vec(seg.lam(t)), _vec(seg.v(t))
    h = tolerances.FD_STEP
    use_analytic = derivatives == "auto"
    xdot_fn = getattr(seg, "xdot", None) if use_analytic else None
    lamdot_fn = getattr(seg, "lamdot", None) if use_analytic else None
    xdot = _vec(xdot_fn(t)) if xdot_fn is not None else _central(seg.x, t, h)
    lamdot = _vec(lamdot_fn(t)) if lamdot_fn is not None else _central(seg.lam, t, h)
    r21 = _vec(sys.dlog_rho_v_dv(t, v)) + np.atleast_2d(sys.dnu_dv(t, v)).T @ lam
    r22 = lamdot + np.atleast_2d(sys.df_dx(t, x)).T @ lam
    r23 = xdot - _vec(sys.f(t, x)) - _vec(sys.nu(t, v))
    return r21, r22, r23


def _weights(times, weights):
    if weights is None:
        return 1.0 / np.diff(np.asarray(times, dtype=float))
    return np.asarray(weights, dtype=float)


def junction_residuals(sys: StochasticSystem, cand, k: int, y_k, weights=None):
    """``(r24, ..., r29)`` at knot ``k`` from the candidate's point values.

    ``weights`` are the per-interval factors (``f0`` for uniform sampling);
    they default to the reciprocal knot spacing.
    """
    times = np.asarray(cand.times, dtype=float)
    K = times.size - 1
    if not 0 <= k <= K:
        raise IndexError(f"knot index {k} outside 0..{K}")
    wts = _weights(times, weights)
    kv = cand.knots
    t = times[k]
    x, xdot, v, w = kv.x[k], kv.xdot[k], kv.v[k], kv.w[k]
    lam, eta = kv.lam[k], kv.eta[k]
    # boundary limits are weighted by the neighbouring interval so that a
    # nonzero lambda(t_0-) or lambda(t_K+) shows up as a violation
    w_plus = wts[min(k, K - 1)]
    w_minus = wts[max(k - 1, 0)]
    r24 = _vec(sys.dlog_rho_v_dv(t, v)) + np.atleast_2d(sys.dnu_dv(t, v)).T @ lam
    r25 = _vec(sys.dlog_rho_w_dw(t, w)) + np.atleast_2d(sys.dxi_dw(t, w)).T @ eta
    r26 = lam - np.atleast_2d(sys.dg_dxdot(t, xdot)).T @ eta
    r27 = (np.atleast_2d(sys.df_dx(t, x)).T @ lam + np.atleast_2d(sys.dh_dx(t, x)).T @ eta
           + w_plus * kv.lam_plus[k] - w_minus * kv.lam_minus[k])
    r28 = _vec(y_k) - _vec(sys.g(t, xdot)) - _vec(sys.h(t, x)) - _vec(sys.xi(t, w))
    r29 = xdot - _vec(sys.f(t, x)) - _vec(sys.nu(t, v))
    return r24, r25, r26, r27, r28, r29


@dataclass(frozen=True)
class Entry:
    max_abs: float
    t: float
    k: int

    def to_dict(self) -> dict:
        return {"max_abs": self.max_abs, "argmax": {"t": self.t, "k": self.k}}


@dataclass(frozen=True)
class ResidualBundle:
    """Max-norm of each optimality condition over the sample grid and knots.

    ``continuity`` measures segment endpoints against the knot states and
    ``r26_lambda`` (only for ``g = 0`` systems) the forced ``lambda(t_k) = 0``.
    """

    entries: dict
    tol: float = tolerances.VERIFY_TOL

    def __getitem__(self, key) -> float:
        return self.entries[key].max_abs

    @property
    def phi(self) -> float:
        return max(self["r23"], self["r29"])

    @property
    def psi(self) -> float:
        return self["r28"]

    @property
    def max_residual(self) -> float:
        return max(e.max_abs for e in self.entries.values())

    def violations(self, tol: Optional[float] = None) -> list:
        tol = self.tol if tol is None else tol
        return [k for k, e in self.entries.items() if not e.max_abs <= tol]

    def ok(self, tol: Optional[float] = None) -> bool:
        return not self.violations(tol)

    def to_dict(self, tol: Optional[float] = None) -> dict:
        tol = self.tol if tol is None else tol
        out = {k: e.to_dict() for k, e in self.entries.items()}
        out["phi"] = self.phi
        out["psi"] = self.psi
        out["tolerance"] = tol
        out["verified"] = self.ok(tol)
        out["violations"] = self.violations(tol)
        return out

    def to_json(self, tol: Optional[float] = None) -> str:
        return json.dumps(self.to_dict(tol), indent=1, sort_keys=True) + "\n"


class _Tracker:
    def __init__(self):
        self.best = {}

    def update(self, key, vec, t, k):
        val = float(np.max(np.abs(vec))) if np.size(vec) else 0.0
        if not math.isfinite(val):
            val = math.inf
        cur = self.best.get(key)
        if cur is None or val > cur.max_abs:
            self.best[key] = Entry(val, float(t), int(k))


def sample_grid(times, grid_per_interval: int):
    """Nested interior sample points ``t_k + i (t_{k+1} - t_k) / n``, ``0 < i < n``."""
    times = np.asarray(times, dtype=float)
    frac = np.arange(1, grid_per_interval) / grid_per_interval
    for k in range(times.size - 1):
        yield k, times[k] + frac * (times[k + 1] - times[k])


def verify(sys: StochasticSystem, ms: MeasurementSet, cand, grid_per_interval: int = 8,
           tol: float = tolerances.VERIFY_TOL, derivatives: str = "auto") -> ResidualBundle:
    """Evaluate every optimality condition for ``cand`` against data ``ms``."""
    if grid_per_interval < 2:
        raise ValueError("grid_per_interval must be >= 2")
    times = np.asarray(cand.times, dtype=float)
    if times.shape != ms.times.shape or np.any(np.abs(times - ms.times) > 1e-12 * max(1.0, np.abs(times).max())):
        raise ValueError("candidate knots do not match the measurement times")
    tracker = _Tracker()
    for k, ts in sample_grid(times, grid_per_interval):
        for t in ts:
            r21, r22, r23 = interval_residuals(sys, cand, float(t), derivatives)
            tracker.update("r21", r21, t, k)
            tracker.update("r22", r22, t, k)
            tracker.update("r23", r23, t, k)
    wts = ms.weights
    g_zero = sys.g_is_zero
    kv = cand.knots
    for k in range(times.size):
        res = junction_residuals(sys, cand, k, ms.values[k], wts)
        for key, vec in zip(JUNCTION_KEYS, res):
            tracker.update(key, vec, times[k], k)
        if g_zero or not np.any(np.atleast_2d(sys.dg_dxdot(times[k], kv.xdot[k]))):
            tracker.update("r26_lambda", kv.lam[k], times[k], k)
    for k, seg in enumerate(cand.segments):
        left = _vec(seg.x(times[k])) - kv.x[k]
        right = _vec(seg.x(times[k + 1])) - kv.x[k + 1]
        tracker.update("continuity", left, times[k], k)
        tracker.update("continuity", right, times[k + 1], k + 1)
    order = INTERVAL_KEYS + JUNCTION_KEYS + ("r26_lambda", "continuity")
    entries = {key: tracker.best[key] for key in order if key in tracker.best}
    return ResidualBundle(entries, tol)
