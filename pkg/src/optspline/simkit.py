"""Trajectory simulation, measurement sampling and the discretized-MLE oracle.

Random draws come from a counter-based Philox generator keyed by
``(seed, stream)``: stream 0 feeds process noise, stream 1 measurement noise,
and draws are consumed in time order, so a run is replayable on any platform.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from . import kernels
from .model import LinearGaussianSystem, MeasurementSet, ModelError, StochasticSystem, TimeHorizon

SCHEMES = ("paper-verlet", "euler-maruyama")
_ALIGN_RTOL = 1e-9
_PROCESS_STREAM = 0
_MEASUREMENT_STREAM = 1


def generator(seed: int, stream: int) -> np.random.Generator:
    """Philox generator for ``(seed, stream)``; ``seed`` is taken modulo 2**64."""
    key = np.array([int(seed) % 2 ** 64, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _steps(length: float, dt: float, what: str) -> int:
    n = round(length / dt)
    if n < 1 or abs(n * dt - length) > _ALIGN_RTOL * max(length, dt):
        raise ModelError(f"{what} ({length!r}) is not an integer multiple of dt = {dt!r}")
    return int(n)


@dataclass(frozen=True)
class SimConfig:
    dt: float
    horizon: TimeHorizon
    x0: tuple
    sigma_p: float
    f0: float
    sigma_m: float
    seed: int = 0
    scheme: str = "euler-maruyama"

    def __post_init__(self):
        if not self.dt > 0:
            raise ModelError("dt must be positive")
        if not self.f0 > 0:
            raise ModelError("f0 must be positive")
        if self.sigma_p < 0 or self.sigma_m < 0:
            raise ModelError("noise scales must be non-negative")
        if self.scheme not in SCHEMES:
            raise ModelError(f"unknown scheme {self.scheme!r}; choose from {', '.join(SCHEMES)}")
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        _steps(1.0 / self.f0, self.dt, "1/f0")
        _steps(self.horizon.length, self.dt, "horizon length")

    @property
    def n_steps(self) -> int:
        return _steps(self.horizon.length, self.dt, "horizon length")

    def grid(self) -> np.ndarray:
        return self.horizon.t0 + self.dt * np.arange(self.n_steps + 1)


@dataclass(frozen=True)
class Trajectory:
    """States on a time grid; ``noise[i]`` is the input applied on step ``i``."""

    times: np.ndarray
    states: np.ndarray
    noise: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        object.__setattr__(self, "states", states)
        if states.shape[0] != self.times.size:
            raise ValueError("times and states differ in length")

    @property
    def n_x(self) -> int:
        return self.states.shape[1]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t"] + [f"x{i + 1}" for i in range(self.n_x)])
        for t, x in zip(self.times, self.states):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in x])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][0].strip() != "t":
            raise ModelError(f"{path}: expected header 't,x1,...'")
        data = np.array([[float(c) for c in row] for row in rows[1:] if row], dtype=float)
        if data.ndim != 2 or data.shape[0] < 2:
            raise ModelError(f"{path}: need at least two trajectory rows")
        return cls(data[:, 0], data[:, 1:])


def _is_double_integrator(sys: StochasticSystem) -> bool:
    if sys.n_x != 2 or sys.n_v != 1:
        return False
    probe = np.array([0.3, -0.7])
    A = np.atleast_2d(sys.df_dx(0.0, probe))
    B = np.atleast_2d(sys.dnu_dv(0.0, np.zeros(1)))
    return (np.array_equal(A, [[0.0, 1.0], [0.0, 0.0]]) and np.array_equal(B, [[0.0], [1.0]])
            and np.allclose(sys.f(0.0, probe), [probe[1], 0.0], rtol=0, atol=0))


def simulate(cfg: SimConfig, sys: StochasticSystem) -> Trajectory:
    """Simulate ``xdot = f(x) + nu(v)`` on the grid of ``cfg``.

    ``paper-verlet`` draws one acceleration ``a ~ N(0, sigma_p^2)`` per step and
    applies the position/velocity update of the original protocol; it needs
    the double-integrator structure. ``euler-maruyama`` applies
    ``v = sigma_p xi / sqrt(dt)`` per step, which keeps the noise intensity
    independent of the step size.
    """
    if len(cfg.x0) != sys.n_x:
        raise ModelError(f"x0 has {len(cfg.x0)} entries, system has n_x = {sys.n_x}")
    N = cfg.n_steps
    rng = generator(cfg.seed, _PROCESS_STREAM)
    times = cfg.grid()
    x0 = np.array(cfg.x0)
    if cfg.scheme == "paper-verlet":
        if not _is_double_integrator(sys):
            raise ModelError("paper-verlet needs the double-integrator structure")
        accel = cfg.sigma_p * rng.standard_normal(N)
        states = kernels.paper_verlet(x0, accel, cfg.dt)
        return Trajectory(times, states, accel[:, None], {"scheme": cfg.scheme})
    v = cfg.sigma_p * rng.standard_normal((N, sys.n_v)) / math.sqrt(cfg.dt)
    lgs = sys.linear
    if lgs is not None:
        states = kernels.linear_em(lgs.A, lgs.B, x0, v, cfg.dt)
    else:
        states = np.empty((N + 1, sys.n_x))
        x = x0.copy()
        states[0] = x
        for i in range(N):
            t = times[i]
            x = x + cfg.dt * (np.atleast_1d(sys.f(t, x)) + np.atleast_1d(sys.nu(t, v[i])))
            states[i + 1] = x
    return Trajectory(times, states, v, {"scheme": cfg.scheme})


def sample_measurements(traj: Trajectory, f0: float, sigma_m: float, seed: int,
                        h: Optional[Callable] = None) -> MeasurementSet:
    """Noisy measurements ``y_k = h(x(t_k)) + sigma_m xi_k`` every ``1/f0``.

    ``h`` defaults to the first state component. The trajectory grid must
    contain every sample time.
    """
    if not f0 > 0:
        raise ModelError("f0 must be positive")
    dt = float(traj.times[1] - traj.times[0])
    if np.any(np.abs(np.diff(traj.times) - dt) > _ALIGN_RTOL * max(dt, 1.0)):
        raise ModelError("trajectory grid is not uniform")
    stride = _steps(1.0 / f0, dt, "1/f0")
    n_steps = traj.times.size - 1
    if n_steps % stride:
        raise ModelError("horizon is not a whole number of sampling periods")
    idx = np.arange(0, n_steps + 1, stride)
    h = h or (lambda t, x: x[:1])
    clean = np.array([np.atleast_1d(h(t, x)) for t, x in zip(traj.times[idx], traj.states[idx])])
    noise = generator(seed, _MEASUREMENT_STREAM).standard_normal(clean.shape)
    values = clean + sigma_m * noise
    return MeasurementSet(traj.times[idx], values, f0=f0, uniform=True)


# --------------------------------------------------------------------------
# discretized maximum-likelihood oracle


def _fine_grid(ms: MeasurementSet, dt: float):
    counts = [_steps(d, dt, "measurement gap") for d in np.diff(ms.times)]
    times = [ms.times[0]]
    step_dt, step_wt = [], []
    for k, n in enumerate(counts):
        h = (ms.times[k + 1] - ms.times[k]) / n
        times.extend(ms.times[k] + h * np.arange(1, n + 1))
        step_dt.extend([h] * n)
        step_wt.extend([ms.weights[k]] * n)
    knot_idx = np.concatenate([[0], np.cumsum(counts)])
    return np.array(times), np.array(step_dt), np.array(step_wt), knot_idx


def _step_operators(lgs, h):
    n = lgs.n_x
    eye = np.eye(n)
    return -eye - 0.5 * h * lgs.A, eye - 0.5 * h * lgs.A, -h * lgs.B


def discretized_objective(lgs: LinearGaussianSystem, ms: MeasurementSet, dt: float,
                          states, noise) -> float:
    """Negative log-likelihood (up to constants) of a fine-grid candidate.

    ``sum_i weight_i h_i v_i^T Q^-1 v_i / 2 + sum_k r_k^T S^-1 r_k / 2`` with
    ``r_k = y_k - C x(t_k)``; the dynamics constraint is not checked here.
    """
    _, step_dt, step_wt, knot_idx = _fine_grid(ms, dt)
    Qi = np.linalg.inv(lgs.Q)
    Si = np.linalg.inv(lgs.S)
    noise = np.asarray(noise, dtype=float).reshape(step_dt.size, lgs.n_v)
    states = np.asarray(states, dtype=float)
    proc = 0.5 * np.einsum("i,ij,jk,ik->", step_wt * step_dt, noise, Qi, noise)
    r = ms.values - states[knot_idx] @ lgs.C.T
    meas = 0.5 * np.einsum("ij,jk,ik->", r, Si, r)
    return float(proc + meas)


def propagate_discrete(lgs: LinearGaussianSystem, ms: MeasurementSet, dt: float, x0, noise):
    """States of the trapezoidal recurrence driven by per-step inputs ``noise``."""
    _, step_dt, _, _ = _fine_grid(ms, dt)
    noise = np.asarray(noise, dtype=float).reshape(step_dt.size, lgs.n_v)
    out = np.empty((step_dt.size + 1, lgs.n_x))
    out[0] = x0
    for i, h in enumerate(step_dt):
        left, right, bmat = _step_operators(lgs, h)
        # (I - h/2 A) x_{i+1} = (I + h/2 A) x_i + h B v_i
        out[i + 1] = np.linalg.solve(right, -left @ out[i] - bmat @ noise[i])
    return out


def solve_discretized_mle(lgs: LinearGaussianSystem, ms: MeasurementSet, dt: float) -> Trajectory:
    """Brute-force oracle: the discretized estimation problem as a sparse QP.

    Unknowns are the states on a fine grid and one noise value per step. The
    dynamics are imposed by the trapezoidal rule
    ``x_{i+1} - x_i - h/2 A (x_i + x_{i+1}) - h B v_i = 0`` and the quadratic
    objective of :func:`discretized_objective` is minimised through its KKT
    system. ``meta["objective"]`` holds the attained value.
    """
    if ms.n_y != lgs.n_y:
        raise ModelError(f"measurements have n_y = {ms.n_y}, system expects {lgs.n_y}")
    times, step_dt, step_wt, knot_idx = _fine_grid(ms, dt)
    n, nv = lgs.n_x, lgs.n_v
    N = step_dt.size
    nxs = n * (N + 1)
    nu = nxs + nv * N
    Qi = np.linalg.inv(lgs.Q)
    Si = np.linalg.inv(lgs.S)

    H = sparse.lil_matrix((nu, nu))
    g = np.zeros(nu)
    CtSiC = lgs.C.T @ Si @ lgs.C
    for k, i in enumerate(knot_idx):
        sl = slice(n * i, n * (i + 1))
        H[sl, sl] = CtSiC
        g[sl] = lgs.C.T @ Si @ ms.values[k]
    for i in range(N):
        sl = slice(nxs + nv * i, nxs + nv * (i + 1))
        H[sl, sl] = step_wt[i] * step_dt[i] * Qi

    E = sparse.lil_matrix((n * N, nu))
    for i, h in enumerate(step_dt):
        left, right, bmat = _step_operators(lgs, h)
        rows = slice(n * i, n * (i + 1))
        E[rows, n * i:n * (i + 1)] = left
        E[rows, n * (i + 1):n * (i + 2)] = right
        E[rows, nxs + nv * i:nxs + nv * (i + 1)] = bmat

    kkt = sparse.bmat([[H.tocsc(), E.T.tocsc()], [E.tocsc(), None]], format="csc")
    rhs = np.concatenate([g, np.zeros(n * N)])
    try:
        sol = splinalg.splu(kkt).solve(rhs)
    except RuntimeError as exc:
        raise np.linalg.LinAlgError(f"singular normal equations: {exc}") from None
    if not np.all(np.isfinite(sol)):
        raise np.linalg.LinAlgError("singular normal equations")
    states = sol[:nxs].reshape(N + 1, n)
    noise = sol[nxs:nu].reshape(N, nv)
    obj = discretized_objective(lgs, ms, dt, states, noise)
    return Trajectory(times, states, noise, {"objective": obj, "knot_index": knot_idx})


# --------------------------------------------------------------------------
# finite-difference baseline


@dataclass(frozen=True)
class PiecewiseConstant:
    """Value ``slopes[k]`` on ``[times[k], times[k+1])``; the last interval is closed."""

    times: np.ndarray
    slopes: np.ndarray

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        k = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.slopes.size - 1)
        return self.slopes[k]


def finite_difference_velocity(ms: MeasurementSet, component: int = 0) -> PiecewiseConstant:
    """Slopes ``(y_{k+1} - y_k) / (t_{k+1} - t_k)`` of one measured component."""
    gaps = np.diff(ms.times)
    if np.any(gaps <= 0):
        raise ModelError("duplicate measurement times")
    return PiecewiseConstant(ms.times.copy(), np.diff(ms.values[:, component]) / gaps)
