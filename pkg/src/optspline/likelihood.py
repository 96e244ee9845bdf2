"""Interval extension of instantaneous densities and the log-likelihood objective.

The extension of a density ``rho`` to an interval ``tau`` is the geometric
mean ``mu(tau, rho) = exp(mean_tau ln rho)``; a singleton ``{t}`` maps to
``rho(t)``. Everything is computed in log space and exponentiated only when a
caller asks for ``mu`` itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from . import tolerances
from .model import MeasurementSet, StochasticSystem


class NonFiniteDensityError(ValueError):
    """``ln rho`` evaluated to a non-finite value at a quadrature node."""


@dataclass(frozen=True)
class LogDensityPath:
    """``t -> ln rho(t)`` on the interval from ``a`` to ``b``.

    ``closed`` flags whether each endpoint belongs to the interval; they do
    not change any integral but decide whether two intervals are separated.
    """

    log_rho: Callable[[float], float]
    a: float
    b: float
    closed: tuple = (True, True)
    breakpoints: tuple = ()

    def __post_init__(self):
        if not self.b >= self.a:
            raise ValueError("interval needs a <= b")

    @property
    def length(self) -> float:
        return self.b - self.a

    @property
    def is_singleton(self) -> bool:
        return self.a == self.b

    def restrict(self, a: float, b: float, closed=(True, True)) -> "LogDensityPath":
        pts = tuple(p for p in self.breakpoints if a < p < b)
        return LogDensityPath(self.log_rho, a, b, closed, pts)


def _checked(fun: Callable[[float], float]) -> Callable[[float], float]:
    def wrapped(t):
        val = float(fun(t))
        if not math.isfinite(val):
            raise NonFiniteDensityError(f"ln rho is not finite at t = {t!r} (value {val})")
        return val

    return wrapped


def integrate_log(fun: Callable[[float], float], a: float, b: float, points=()) -> float:
    """Adaptive Gauss-Kronrod integral of a log-density over ``[a, b]``."""
    if a == b:
        return 0.0
    val, _ = integrate.quad(
        _checked(fun), a, b,
        epsabs=tolerances.QUAD_ABS_TOL, epsrel=1e-13, limit=200,
        points=list(points) or None,
    )
    return float(val)


def log_mu(path: LogDensityPath) -> float:
    """``ln mu(tau, rho)``; the singleton convention returns ``ln rho(t)``."""
    if path.is_singleton:
        return _checked(path.log_rho)(path.a)
    return integrate_log(path.log_rho, path.a, path.b, path.breakpoints) / path.length


def mu_interval(path: LogDensityPath) -> float:
    return math.exp(log_mu(path))


def mu_product_check(path: LogDensityPath, split: float):
    """Both sides of ``mu(tau)^|tau| = mu(tau1)^|tau1| mu(tau2)^|tau2|``.

    ``tau1 = [a, split]`` and ``tau2 = (split, b]`` partition ``tau``.
    """
    if not path.a < split < path.b:
        raise ValueError(f"split {split} is not strictly inside [{path.a}, {path.b}]")
    left = path.restrict(path.a, split, (path.closed[0], True))
    right = path.restrict(split, path.b, (False, path.closed[1]))
    lhs = math.exp(path.length * log_mu(path))
    rhs = math.exp(left.length * log_mu(left) + right.length * log_mu(right))
    return lhs, rhs


def separated(first: LogDensityPath, second: LogDensityPath) -> bool:
    """True when some point lies strictly between the two intervals."""
    lo, hi = (first, second) if first.a <= second.a else (second, first)
    if lo.b < hi.a:
        return True
    if lo.b == hi.a and not lo.closed[1] and not hi.closed[0]:
        return True
    return False


def log_mu_union(paths: Sequence[LogDensityPath]) -> float:
    """``ln mu`` of a union of pairwise separated intervals (sum of components)."""
    paths = list(paths)
    for i in range(len(paths)):
        for j in range(i + 1, len(paths)):
            if not separated(paths[i], paths[j]):
                raise ValueError("union components must be pairwise separated")
    return math.fsum(log_mu(p) for p in paths)


def mu_union(paths: Sequence[LogDensityPath]) -> float:
    return math.exp(log_mu_union(paths))


@dataclass(frozen=True)
class ObjectiveValue:
    """``ln J`` split into weighted interval integrals and knot terms."""

    log_value: float
    integral_terms: np.ndarray
    weights: np.ndarray
    point_terms: np.ndarray


def log_objective(sys: StochasticSystem, ms: MeasurementSet,
                  v_path: Callable[[float], np.ndarray],
                  v_points: Sequence, w_points: Sequence) -> ObjectiveValue:
    """Log-likelihood of a noise realisation.

    ``ln J = sum_k weight_k int_{t_k}^{t_{k+1}} ln rho_v(t, v(t)) dt
    + sum_k [ln rho_v(t_k, v_k) + ln rho_w(t_k, w_k)]`` with
    ``weight_k = 1 / (t_{k+1} - t_k)`` (equal to ``f0`` for uniform sampling).
    """
    K = ms.K
    v_points = [np.atleast_1d(np.asarray(v, dtype=float)) for v in v_points]
    w_points = [np.atleast_1d(np.asarray(w, dtype=float)) for w in w_points]
    if len(v_points) != K + 1 or len(w_points) != K + 1:
        raise ValueError(f"need {K + 1} knot noise values, got {len(v_points)} and {len(w_points)}")
    for v in v_points:
        if v.shape != (sys.n_v,):
            raise ValueError(f"v point has shape {v.shape}, expected ({sys.n_v},)")
    for w in w_points:
        if w.shape != (sys.n_w,):
            raise ValueError(f"w point has shape {w.shape}, expected ({sys.n_w},)")

    def integrand(t):
        v = np.atleast_1d(np.asarray(v_path(t), dtype=float))
        if v.shape != (sys.n_v,):
            raise ValueError(f"v_path returned shape {v.shape}, expected ({sys.n_v},)")
        return sys.log_rho_v(t, v)

    times = ms.times
    integrals = np.array([integrate_log(integrand, times[k], times[k + 1]) for k in range(K)])
    points = np.empty(K + 1)
    for k in range(K + 1):
        lv = float(sys.log_rho_v(times[k], v_points[k]))
        lw = float(sys.log_rho_w(times[k], w_points[k]))
        if not (math.isfinite(lv) and math.isfinite(lw)):
            raise NonFiniteDensityError(f"non-finite log density at knot {k} (t = {times[k]})")
        points[k] = lv + lw
    weights = ms.weights
    total = math.fsum(list(weights * integrals) + list(points))
    return ObjectiveValue(total, integrals, weights, points)
