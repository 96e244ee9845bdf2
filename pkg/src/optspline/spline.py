"""Piecewise continuous-time estimates and their finite JSON representation.

A :class:`Spline` is a sequence of segments, one per inter-measurement
interval, plus point values at the knots (state, state derivative, noises and
both multipliers with their one-sided limits). Three segment families exist:

``linear-gaussian``
    closed form ``(x, lambda)(t) = exp(H s) (c_x, c_lambda)`` with
    ``H = [[A, B Q B^T], [0, -A^T]]`` and ``s = t - t_start``.
``alpha``
    closed form for the double integrator with ``exp(-(v/sigma)^(2 alpha)/2)``
    process density.
``polynomial``
    Legendre polynomials through values at Gauss-Lobatto nodes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from numpy.polynomial import legendre
from scipy.linalg import expm

from .kernels import odd_power_moments

FORMAT = "optspline-spline/1"


class HorizonError(ValueError):
    """Evaluation requested outside ``[t_0, t_K]``."""


# --------------------------------------------------------------------------
# linear-Gaussian segments


@dataclass(frozen=True)
class LinearModel:
    """Matrices shared by all linear-Gaussian segments of one spline."""

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        for k in "ABQ":
            object.__setattr__(self, k, np.atleast_2d(np.array(getattr(self, k), dtype=float)))
        n = self.A.shape[0]
        H = np.zeros((2 * n, 2 * n))
        H[:n, :n] = self.A
        H[:n, n:] = self.B @ self.Q @ self.B.T
        H[n:, n:] = -self.A.T
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "QBt", self.Q @ self.B.T)

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    def propagator(self, s):
        """``exp(H s)`` for scalar or 1-D array ``s`` (stacked on the first axis)."""
        s = np.asarray(s, dtype=float)
        # overflow is reported by the callers' finiteness checks
        with np.errstate(over="ignore", invalid="ignore"):
            if s.ndim == 0:
                return expm(self.H * s)
            return expm(self.H[None] * s[:, None, None])

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "B": self.B.tolist(), "Q": self.Q.tolist()}


@dataclass(frozen=True)
class LinearSegment:
    """``x(t) = e^{A s}[G(s) c_lambda + c_x]``, ``lambda(t) = e^{-A^T s} c_lambda``.

    ``Phi``, ``Psi``, ``G`` and ``P = Phi G`` are cached at the segment length.
    """

    t_start: float
    t_end: float
    c_lambda: np.ndarray
    c_x: np.ndarray
    model: LinearModel
    Phi: np.ndarray = field(repr=False, default=None)
    Psi: np.ndarray = field(repr=False, default=None)
    G: np.ndarray = field(repr=False, default=None)
    P: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        object.__setattr__(self, "c_lambda", np.array(self.c_lambda, dtype=float))
        object.__setattr__(self, "c_x", np.array(self.c_x, dtype=float))
        if self.Phi is None:
            n = self.model.n_x
            E = self.model.propagator(self.t_end - self.t_start)
            object.__setattr__(self, "Phi", E[:n, :n])
            object.__setattr__(self, "P", E[:n, n:])
            object.__setattr__(self, "Psi", E[n:, n:])
            G = self.Psi.T @ self.P
            object.__setattr__(self, "G", 0.5 * (G + G.T))

    @property
    def z0(self) -> np.ndarray:
        return np.concatenate([self.c_x, self.c_lambda])

    def _z(self, t):
        return self.model.propagator(np.asarray(t, dtype=float) - self.t_start) @ self.z0

    def x(self, t):
        return self._z(t)[..., : self.model.n_x]

    def lam(self, t):
        return self._z(t)[..., self.model.n_x:]

    def v(self, t):
        return self.lam(t) @ self.model.QBt.T

    def xdot(self, t):
        return (self._z(t) @ self.model.H.T)[..., : self.model.n_x]

    def lamdot(self, t):
        return (self._z(t) @ self.model.H.T)[..., self.model.n_x:]

    def end_state(self) -> np.ndarray:
        return self.P @ self.c_lambda + self.Phi @ self.c_x

    def end_lambda(self) -> np.ndarray:
        return self.Psi @ self.c_lambda

    def to_dict(self) -> dict:
        return {"t_start": self.t_start, "t_end": self.t_end,
                "c_lambda": self.c_lambda.tolist(), "c_x": self.c_x.tolist()}


# --------------------------------------------------------------------------
# alpha-family segments


def oddpow(z, e):
    """``sign(z) |z|^e``, the real odd-root convention."""
    z = np.asarray(z, dtype=float)
    return np.sign(z) * np.abs(z) ** e


@dataclass(frozen=True)
class AlphaSegment:
    """Closed-form segment for the alpha-family double integrator.

    In local time ``s = t - t_start``: ``lambda = (-a, a s + b)``,
    ``v = kappa (a s + b)^(1/(2 alpha - 1))``, ``x2 = c + int v``,
    ``x1 = d + c s + int int v`` with ``kappa = (sigma^(2 alpha) / alpha)^(1/(2 alpha - 1))``.
    """

    t_start: float
    t_end: float
    a: float
    b: float
    c: float
    d: float
    alpha: int
    sigma_p: float

    @property
    def p(self) -> float:
        return 1.0 / (2 * self.alpha - 1)

    @property
    def kappa(self) -> float:
        return (self.sigma_p ** (2 * self.alpha) / self.alpha) ** self.p

    @property
    def position_exponent(self) -> float:
        """Exponent of ``(a s + b)`` in the non-affine part of ``x1``."""
        return (4 * self.alpha - 1) / (2 * self.alpha - 1)

    def _moments(self, t):
        s = np.asarray(t, dtype=float) - self.t_start
        m = odd_power_moments(self.a, self.b, s, self.p)
        return s, m

    def x(self, t):
        s, m = self._moments(t)
        k = self.kappa
        out = np.stack([self.d + self.c * s.ravel() + k * m[:, 1], self.c + k * m[:, 0]], axis=-1)
        return out[0] if np.ndim(t) == 0 else out

    def lam(self, t):
        s = np.asarray(t, dtype=float) - self.t_start
        return np.stack([np.full_like(s, -self.a), self.a * s + self.b], axis=-1)

    def v(self, t):
        s = np.asarray(t, dtype=float) - self.t_start
        return (self.kappa * oddpow(self.a * s + self.b, self.p))[..., None]

    def xdot(self, t):
        x = self.x(t)
        return np.stack([x[..., 1], self.v(t)[..., 0]], axis=-1)

    def lamdot(self, t):
        s = np.asarray(t, dtype=float) - self.t_start
        return np.stack([np.zeros_like(s), np.full_like(s, self.a)], axis=-1)

    def to_dict(self) -> dict:
        return {"t_start": self.t_start, "t_end": self.t_end,
                "a": self.a, "b": self.b, "c": self.c, "d": self.d}


# --------------------------------------------------------------------------
# polynomial segments


def lobatto_nodes(m: int) -> np.ndarray:
    """Gauss-Lobatto-Legendre nodes on ``[-1, 1]`` (``m >= 2``)."""
    if m < 2:
        raise ValueError("need at least 2 Lobatto nodes")
    if m == 2:
        return np.array([-1.0, 1.0])
    inner = legendre.legroots(legendre.legder([0] * (m - 1) + [1]))
    return np.concatenate([[-1.0], np.sort(inner.real), [1.0]])


@dataclass(frozen=True)
class PolynomialSegment:
    """Polynomials of degree ``m - 1`` through node values at Lobatto nodes."""

    t_start: float
    t_end: float
    nodes: np.ndarray
    X: np.ndarray
    L: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        for k in ("nodes", "X", "L", "V"):
            object.__setattr__(self, k, np.array(getattr(self, k), dtype=float))
        vander = legendre.legvander(self.nodes, self.nodes.size - 1)
        coef = np.linalg.solve(vander, np.hstack([self.X, self.L, self.V]))
        object.__setattr__(self, "_coef", coef)
        object.__setattr__(self, "_dcoef", legendre.legder(coef) * (2.0 / self.length))

    @property
    def length(self) -> float:
        return self.t_end - self.t_start

    def _tau(self, t):
        return 2.0 * (np.asarray(t, dtype=float) - self.t_start) / self.length - 1.0

    def _eval(self, t, coef, lo, hi):
        out = legendre.legval(self._tau(t), coef[:, lo:hi])
        return np.moveaxis(np.asarray(out), 0, -1)

    def x(self, t):
        n = self.X.shape[1]
        return self._eval(t, self._coef, 0, n)

    def lam(self, t):
        n = self.X.shape[1]
        return self._eval(t, self._coef, n, 2 * n)

    def v(self, t):
        n = self.X.shape[1]
        return self._eval(t, self._coef, 2 * n, 2 * n + self.V.shape[1])

    def xdot(self, t):
        n = self.X.shape[1]
        return self._eval(t, self._dcoef, 0, n)

    def lamdot(self, t):
        n = self.X.shape[1]
        return self._eval(t, self._dcoef, n, 2 * n)

    def to_dict(self) -> dict:
        return {"t_start": self.t_start, "t_end": self.t_end, "nodes": self.nodes.tolist(),
                "x": self.X.tolist(), "lambda": self.L.tolist(), "v": self.V.tolist()}


# --------------------------------------------------------------------------
# knot values and the spline container


KNOT_FIELDS = ("x", "xdot", "v", "w", "lam", "eta", "lam_minus", "lam_plus")


@dataclass(frozen=True)
class KnotValues:
    """Point values at the knots, each a ``(K+1, dim)`` array.

    ``lam`` is the knot value ``lambda(t_k)``; ``lam_minus``/``lam_plus`` are
    the one-sided limits, with ``lam_minus[0] = lam_plus[K] = 0`` by
    convention.
    """

    x: np.ndarray
    xdot: np.ndarray
    v: np.ndarray
    w: np.ndarray
    lam: np.ndarray
    eta: np.ndarray
    lam_minus: np.ndarray
    lam_plus: np.ndarray

    def __post_init__(self):
        for k in KNOT_FIELDS:
            arr = np.array(getattr(self, k), dtype=float)
            if arr.ndim == 1:
                arr = arr[:, None]
            arr.setflags(write=False)
            object.__setattr__(self, k, arr)

    def replace(self, **changes) -> "KnotValues":
        data = {k: getattr(self, k) for k in KNOT_FIELDS}
        data.update(changes)
        return KnotValues(**data)

    def to_dict(self) -> dict:
        names = {"lam": "lambda", "lam_minus": "lambda_minus", "lam_plus": "lambda_plus"}
        return {names.get(k, k): getattr(self, k).tolist() for k in KNOT_FIELDS}

    @classmethod
    def from_dict(cls, data) -> "KnotValues":
        names = {"lam": "lambda", "lam_minus": "lambda_minus", "lam_plus": "lambda_plus"}
        return cls(**{k: data[names.get(k, k)] for k in KNOT_FIELDS})


@dataclass(frozen=True)
class Spline:
    """Optimal spline: segments on ``(t_k, t_{k+1})`` plus knot values."""

    kind: str
    times: np.ndarray
    segments: tuple
    knots: KnotValues
    model: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        times.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "segments", tuple(self.segments))
        if len(self.segments) != times.size - 1:
            raise ValueError("need exactly one segment per interval")

    @property
    def K(self) -> int:
        return len(self.segments)

    @property
    def n_x(self) -> int:
        return self.knots.x.shape[1]

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.times[0]) or np.any(t > self.times[-1]):
            raise HorizonError(
                f"t outside the horizon [{self.times[0]}, {self.times[-1]}]; no extrapolation")
        return t

    def segment_index(self, t: float) -> int:
        """Index of the segment owning ``t`` (right-closed intervals, first is closed)."""
        t = float(self._check(t))
        k = int(np.searchsorted(self.times, t, side="left")) - 1
        return min(max(k, 0), self.K - 1)

    def knot_index(self, t: float) -> Optional[int]:
        k = int(np.searchsorted(self.times, t))
        if k < self.times.size and self.times[k] == t:
            return k
        return None

    def evaluate(self, t: float):
        """``(x, v, lambda)`` at ``t``; knots return the stored point values."""
        t = float(self._check(t))
        j = self.knot_index(t)
        if j is not None:
            return self.knots.x[j].copy(), self.knots.v[j].copy(), self.knots.lam[j].copy()
        seg = self.segments[self.segment_index(t)]
        return np.asarray(seg.x(t)), np.asarray(seg.v(t)), np.asarray(seg.lam(t))

    def sample(self, ts):
        """Vectorised ``(X, V)`` at the times ``ts``; knot times use knot states.

        ``V`` at a knot is the limit from the segment on its right (from the
        left at ``t_K``) so dense plots stay continuous within segments.
        """
        ts = self._check(np.atleast_1d(np.asarray(ts, dtype=float)))
        X = np.empty((ts.size, self.n_x))
        V = np.empty((ts.size, self.knots.v.shape[1]))
        idx = np.clip(np.searchsorted(self.times, ts, side="right") - 1, 0, self.K - 1)
        for k in np.unique(idx):
            sel = idx == k
            seg = self.segments[k]
            X[sel] = np.reshape(seg.x(ts[sel]), (-1, self.n_x))
            V[sel] = np.reshape(seg.v(ts[sel]), (-1, V.shape[1]))
        for j, t in enumerate(self.times):
            X[ts == t] = self.knots.x[j]
        return X, V

    def with_knots(self, **changes) -> "Spline":
        return Spline(self.kind, self.times, self.segments, self.knots.replace(**changes),
                      self.model, self.info)

    # ---------------------------------------------------------------- JSON

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "segment_type": self.kind,
            "model": self.model,
            "times": self.times.tolist(),
            "segments": [s.to_dict() for s in self.segments],
            "knots": self.knots.to_dict(),
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_dict(cls, data) -> "Spline":
        if data.get("format") != FORMAT:
            raise ValueError(f"not a spline document (format {data.get('format')!r})")
        kind = data["segment_type"]
        model = data.get("model", {})
        segs = []
        if kind == "linear-gaussian":
            lm = LinearModel(model["A"], model["B"], model["Q"])
            segs = [LinearSegment(s["t_start"], s["t_end"], s["c_lambda"], s["c_x"], lm)
                    for s in data["segments"]]
        elif kind == "alpha":
            segs = [AlphaSegment(s["t_start"], s["t_end"], s["a"], s["b"], s["c"], s["d"],
                                 int(model["alpha"]), float(model["sigma_p"]))
                    for s in data["segments"]]
        elif kind == "polynomial":
            segs = [PolynomialSegment(s["t_start"], s["t_end"], s["nodes"], s["x"],
                                      s["lambda"], s["v"]) for s in data["segments"]]
        else:
            raise ValueError(f"unknown segment type {kind!r}")
        return cls(kind, data["times"], segs, KnotValues.from_dict(data["knots"]), model)

    @classmethod
    def from_json(cls, path_or_text) -> "Spline":
        text = str(path_or_text)
        if not text.lstrip().startswith("{"):
            text = Path(path_or_text).read_text(encoding="utf-8")
        return cls.from_dict(json.loads(text))


def eval_spline(spline: Spline, t: float):
    """``(x, v, lambda)`` of the spline at ``t`` inside the horizon."""
    return spline.evaluate(t)


def divided_difference(ts, ys) -> float:
    """Highest-order divided difference of ``ys`` over the nodes ``ts``."""
    ts = np.asarray(ts, dtype=float)
    table = np.array(ys, dtype=float)
    for order in range(1, ts.size):
        table = (table[1:] - table[:-1]) / (ts[order:] - ts[:-order])
    return float(table[0])
