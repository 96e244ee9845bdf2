"""System descriptions, measurement sets and the built-in presets.

A :class:`StochasticSystem` bundles the dynamics ``xdot = f(t, x) + nu(t, v)``,
the measurement map ``y = g(t, xdot) + h(t, x) + xi(t, w)``, their Jacobians
and the noise log-densities. Linear-Gaussian systems additionally carry a
:class:`LinearGaussianSystem` with the matrices ``A, B, C, D, Q, R``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Callable, Mapping, Optional

import numpy as np
from scipy import integrate, special

from . import tolerances

Vector = np.ndarray
Callback = Callable[[float, np.ndarray], np.ndarray]


class ModelError(ValueError):
    """Invalid system or measurement description."""


def _frozen(a, ndim=None) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if ndim == 2 and arr.ndim < 2:
        arr = np.atleast_2d(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LinearGaussianSystem:
    """``xdot = A x + B v``, ``y = C x + D w`` with ``v ~ N(0, Q)``, ``w ~ N(0, R)``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        for name in "ABCDQR":
            object.__setattr__(self, name, _frozen(getattr(self, name), ndim=2))
        A, B, C, D, Q, R = self.A, self.B, self.C, self.D, self.Q, self.R
        n_x = A.shape[0]
        if A.shape != (n_x, n_x):
            raise ModelError(f"A must be square, got {A.shape}")
        if B.shape[0] != n_x or C.shape[1] != n_x:
            raise ModelError("B rows and C columns must equal n_x")
        if D.shape[0] != C.shape[0]:
            raise ModelError("D rows must equal n_y")
        if Q.shape != (B.shape[1], B.shape[1]) or R.shape != (D.shape[1], D.shape[1]):
            raise ModelError("Q must be n_v x n_v and R must be n_w x n_w")
        for name, M in (("Q", Q), ("R", R)):
            if not np.allclose(M, M.T, rtol=0, atol=1e-12 * max(1.0, np.abs(M).max())):
                raise ModelError(f"{name} must be symmetric")
            try:
                np.linalg.cholesky(M)
            except np.linalg.LinAlgError:
                raise ModelError(f"{name} must be positive definite") from None
        S = D @ R @ D.T
        if np.linalg.cond(S) > 1e14:
            raise ModelError("D R D^T must be invertible")

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_v(self) -> int:
        return self.B.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    @property
    def n_w(self) -> int:
        return self.D.shape[1]

    @property
    def S(self) -> np.ndarray:
        """Measurement-residual covariance ``D R D^T``."""
        return self.D @ self.R @ self.D.T

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in "ABCDQR"}

    @classmethod
    def from_dict(cls, data: Mapping) -> "LinearGaussianSystem":
        return cls(*(np.array(data[k], dtype=float) for k in "ABCDQR"))


@dataclass(frozen=True)
class StochasticSystem:
    """General stochastic system with user-supplied callbacks and Jacobians.

    ``inv_dlog_rho_v`` is optional: given a target gradient ``g`` it returns
    the ``v`` with ``dlog_rho_v_dv(t, v) = g``. Supplying it declares that
    ``nu`` is affine in ``v`` and lets the collocation solver eliminate the
    process noise inside segments.
    """

    n_x: int
    n_v: int
    n_w: int
    n_y: int
    f: Callback
    df_dx: Callback
    nu: Callback
    dnu_dv: Callback
    g: Callback
    dg_dxdot: Callback
    h: Callback
    dh_dx: Callback
    xi: Callback
    dxi_dw: Callback
    log_rho_v: Callable[[float, np.ndarray], float]
    dlog_rho_v_dv: Callback
    log_rho_w: Callable[[float, np.ndarray], float]
    dlog_rho_w_dw: Callback
    inv_dlog_rho_v: Optional[Callback] = None
    name: str = "custom"
    params: Mapping = field(default_factory=dict)
    linear: Optional[LinearGaussianSystem] = None

    def __post_init__(self):
        for dim in ("n_x", "n_v", "n_w", "n_y"):
            if int(getattr(self, dim)) < 1:
                raise ModelError(f"{dim} must be a positive integer")
        object.__setattr__(self, "params", MappingProxyType(dict(self.params)))
        t = 0.0
        if not math.isfinite(float(self.log_rho_v(t, np.zeros(self.n_v)))):
            raise ModelError("log_rho_v must be finite at v = 0")
        if not math.isfinite(float(self.log_rho_w(t, np.zeros(self.n_w)))):
            raise ModelError("log_rho_w must be finite at w = 0")

    @property
    def g_is_zero(self) -> bool:
        return bool(self.params.get("g_zero", False))


@dataclass(frozen=True)
class TimeHorizon:
    t0: float
    tK: float

    def __post_init__(self):
        if not self.tK > self.t0:
            raise ModelError("time horizon needs tK > t0")

    @property
    def length(self) -> float:
        return self.tK - self.t0


@dataclass(frozen=True)
class MeasurementSet:
    """Measurements ``y_k`` at strictly increasing times ``t_0 < ... < t_K``.

    ``f0`` defaults to the mean sampling rate ``K / (t_K - t_0)``. With
    ``uniform=True`` the spacing is checked against ``1 / f0``.
    """

    times: np.ndarray
    values: np.ndarray
    f0: Optional[float] = None
    uniform: bool = False

    def __post_init__(self):
        times = np.array(self.times, dtype=float).ravel()
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if times.size < 2:
            raise ModelError("need K ≥ 1 intervals (at least 2 measurements)")
        if values.shape[0] != times.size:
            raise ModelError("times and values differ in length")
        gaps = np.diff(times)
        if np.any(gaps <= 0):
            raise ModelError("measurement times must be strictly increasing (duplicate knots?)")
        if not np.all(np.isfinite(values)) or not np.all(np.isfinite(times)):
            raise ModelError("measurements must be finite")
        f0 = self.f0
        if f0 is None:
            f0 = (times.size - 1) / (times[-1] - times[0])
        f0 = float(f0)
        if not f0 > 0:
            raise ModelError("f0 must be positive")
        if self.uniform:
            period = 1.0 / f0
            if np.any(np.abs(gaps - period) > tolerances.UNIFORM_RTOL * period):
                raise ModelError("declared uniform but spacing differs from 1/f0")
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "f0", f0)

    @property
    def K(self) -> int:
        return self.times.size - 1

    @property
    def n_y(self) -> int:
        return self.values.shape[1]

    @property
    def horizon(self) -> TimeHorizon:
        return TimeHorizon(float(self.times[0]), float(self.times[-1]))

    @property
    def weights(self) -> np.ndarray:
        """Per-interval objective weight ``1 / (t_{k+1} - t_k)`` (``f0`` if uniform)."""
        if self.uniform:
            return np.full(self.K, self.f0)
        return 1.0 / np.diff(self.times)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t"] + [f"y{i + 1}" for i in range(self.n_y)])
        for t, y in zip(self.times, self.values):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in y])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_csv(cls, path, f0: Optional[float] = None, uniform: bool = False) -> "MeasurementSet":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][0].strip() != "t":
            raise ModelError(f"{path}: expected header 't,y1,...'")
        data = np.array([[float(c) for c in row] for row in rows[1:] if row], dtype=float)
        if data.ndim != 2 or data.shape[0] < 2:
            raise ModelError("need K ≥ 1 intervals (at least 2 measurements)")
        return cls(data[:, 0], data[:, 1:], f0=f0, uniform=uniform)


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Finding:
    callback: str
    kind: str
    message: str
    probe: int


@dataclass(frozen=True)
class ValidationReport:
    probes: int
    findings: tuple

    @property
    def ok(self) -> bool:
        return not self.findings

    def __str__(self) -> str:
        if self.ok:
            return f"all checks passed ({self.probes} probes)"
        lines = [f"{len(self.findings)} finding(s):"]
        lines += [f"  [{f.probe}] {f.callback}: {f.kind}: {f.message}" for f in self.findings]
        return "\n".join(lines)


def _central_jacobian(fun, t, u, step):
    u = np.asarray(u, dtype=float)
    cols = []
    for j in range(u.size):
        e = np.zeros_like(u)
        e[j] = step
        cols.append((np.atleast_1d(fun(t, u + e)) - np.atleast_1d(fun(t, u - e))) / (2 * step))
    return np.column_stack(cols)


def validate_system(sys: StochasticSystem, probes: int = 10, seed: int = 0) -> ValidationReport:
    """Probe every callback for shape, finiteness and Jacobian consistency.

    Jacobians and log-density gradients are compared with central finite
    differences (step 1e-6) at relative tolerance 1e-4. Evaluation errors are
    reported as findings rather than raised.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    rng = np.random.default_rng(seed)
    findings = []
    nx, nv, nw, ny = sys.n_x, sys.n_v, sys.n_w, sys.n_y
    vec_specs = {
        "f": ("x", nx), "nu": ("v", nx), "g": ("x", ny), "h": ("x", ny), "xi": ("w", ny),
        "dlog_rho_v_dv": ("v", nv), "dlog_rho_w_dw": ("w", nw),
    }
    jac_specs = {
        "df_dx": ("f", "x", (nx, nx)), "dnu_dv": ("nu", "v", (nx, nv)),
        "dg_dxdot": ("g", "x", (ny, nx)), "dh_dx": ("h", "x", (ny, nx)),
        "dxi_dw": ("xi", "w", (ny, nw)),
    }
    grad_specs = {"dlog_rho_v_dv": ("log_rho_v", "v"), "dlog_rho_w_dw": ("log_rho_w", "w")}

    for i in range(probes):
        t = float(rng.uniform(0.0, 10.0))
        args = {"x": rng.normal(size=nx), "v": rng.normal(size=nv), "w": rng.normal(size=nw)}

        def record(name, kind, msg):
            findings.append(Finding(name, kind, msg, i))

        def call(name, u):
            try:
                return np.asarray(getattr(sys, name)(t, u), dtype=float)
            except Exception as exc:  # reported, not raised
                record(name, "error", repr(exc))
                return None

        for name, (arg, n_out) in vec_specs.items():
            out = call(name, args[arg])
            if out is None:
                continue
            if out.shape != (n_out,):
                record(name, "shape", f"expected ({n_out},), got {out.shape}")
            elif not np.all(np.isfinite(out)):
                record(name, "non-finite", str(out))

        for name in ("log_rho_v", "log_rho_w"):
            arg = "v" if name.endswith("v") else "w"
            out = call(name, args[arg])
            if out is not None and (out.size != 1 or not np.all(np.isfinite(out))):
                record(name, "non-finite", f"expected finite scalar, got {out}")

        for name, (base, arg, shape) in jac_specs.items():
            J = call(name, args[arg])
            if J is None:
                continue
            if J.shape != shape:
                record(name, "shape", f"expected {shape}, got {J.shape}")
                continue
            try:
                J_fd = _central_jacobian(getattr(sys, base), t, args[arg], tolerances.FD_STEP)
            except Exception as exc:
                record(base, "error", repr(exc))
                continue
            scale = max(1.0, float(np.abs(J_fd).max()))
            err = float(np.abs(J - J_fd).max())
            if not err <= tolerances.JACOBIAN_RTOL * scale:
                record(name, "jacobian", f"max deviation {err:.3e} from finite differences")

        for name, (base, arg) in grad_specs.items():
            gvec = call(name, args[arg])
            if gvec is None or gvec.shape != (len(args[arg]),):
                continue
            fun = getattr(sys, base)
            g_fd = _central_jacobian(lambda tt, u: np.atleast_1d(fun(tt, u)), t, args[arg],
                                     tolerances.FD_STEP).ravel()
            scale = max(1.0, float(np.abs(g_fd).max()))
            err = float(np.abs(gvec - g_fd).max())
            if not err <= tolerances.JACOBIAN_RTOL * scale:
                record(name, "gradient", f"max deviation {err:.3e} from finite differences")

    return ValidationReport(probes, tuple(findings))


# --------------------------------------------------------------------------
# presets


def _gaussian_logpdf(cov):
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    inv = np.linalg.inv(cov)
    _, logdet = np.linalg.slogdet(cov)
    const = -0.5 * (cov.shape[0] * math.log(2 * math.pi) + logdet)

    def logpdf(t, u):
        u = np.asarray(u, dtype=float)
        return float(const - 0.5 * u @ inv @ u)

    def grad(t, u):
        return -inv @ np.asarray(u, dtype=float)

    def inv_grad(t, g):
        return -cov @ np.asarray(g, dtype=float)

    return logpdf, grad, inv_grad


def system_from_linear(lgs: LinearGaussianSystem, name: str = "linear-custom",
                       params: Optional[Mapping] = None) -> StochasticSystem:
    """Wrap a :class:`LinearGaussianSystem` as a callback-based system."""
    A, B, C, D = lgs.A, lgs.B, lgs.C, lgs.D
    lrv, dlrv, inv_v = _gaussian_logpdf(lgs.Q)
    lrw, dlrw, _ = _gaussian_logpdf(lgs.R)
    zeros_yx = np.zeros((lgs.n_y, lgs.n_x))
    merged = {"g_zero": True}
    merged.update(params or {})
    return StochasticSystem(
        n_x=lgs.n_x, n_v=lgs.n_v, n_w=lgs.n_w, n_y=lgs.n_y,
        f=lambda t, x: A @ x,
        df_dx=lambda t, x: A.copy(),
        nu=lambda t, v: B @ v,
        dnu_dv=lambda t, v: B.copy(),
        g=lambda t, xd: np.zeros(lgs.n_y),
        dg_dxdot=lambda t, xd: zeros_yx.copy(),
        h=lambda t, x: C @ x,
        dh_dx=lambda t, x: C.copy(),
        xi=lambda t, w: D @ w,
        dxi_dw=lambda t, w: D.copy(),
        log_rho_v=lrv, dlog_rho_v_dv=dlrv,
        log_rho_w=lrw, dlog_rho_w_dw=dlrw,
        inv_dlog_rho_v=inv_v,
        name=name, params=merged, linear=lgs,
    )


def _check_positive(**kwargs):
    for k, v in kwargs.items():
        if not (isinstance(v, (int, float)) and v > 0 and math.isfinite(v)):
            raise ModelError(f"{k} must be a positive number, got {v!r}")


def _second_order_lgs(A, sigma_p, sigma_m):
    return LinearGaussianSystem(
        A=A, B=[[0.0], [1.0]], C=[[1.0, 0.0]], D=[[1.0]],
        Q=[[sigma_p ** 2]], R=[[sigma_m ** 2]],
    )


def preset_double_integrator(sigma_p: float, sigma_m: float):
    """Point mass under white forcing, position measured: ``rddot = v``, ``y = r + w``.

    Returns ``(StochasticSystem, LinearGaussianSystem)``.
    """
    _check_positive(sigma_p=sigma_p, sigma_m=sigma_m)
    lgs = _second_order_lgs([[0.0, 1.0], [0.0, 0.0]], sigma_p, sigma_m)
    sys = system_from_linear(lgs, "double-integrator",
                             {"sigma_p": sigma_p, "sigma_m": sigma_m})
    return sys, lgs


def preset_harmonic(omega: float, sigma_p: float, sigma_m: float):
    """Stochastic harmonic oscillator ``rddot = -omega^2 r + v``."""
    _check_positive(omega=omega, sigma_p=sigma_p, sigma_m=sigma_m)
    lgs = _second_order_lgs([[0.0, 1.0], [-omega ** 2, 0.0]], sigma_p, sigma_m)
    sys = system_from_linear(lgs, "harmonic",
                             {"omega": omega, "sigma_p": sigma_p, "sigma_m": sigma_m})
    return sys, lgs


def alpha_normalization(alpha: int, sigma_p: float) -> float:
    """``c_alpha`` such that ``c_alpha exp(-(v/sigma_p)^(2 alpha) / 2)`` integrates to 1."""
    integrand = lambda v: math.exp(-0.5 * (v / sigma_p) ** (2 * alpha))
    half, _ = integrate.quad(integrand, 0.0, math.inf, epsabs=0.0, epsrel=1e-13, limit=200)
    return 1.0 / (2.0 * half)


def alpha_normalization_closed_form(alpha: int, sigma_p: float) -> float:
    """Gamma-function expression for the same constant (used as a cross-check)."""
    e = 1.0 / (2 * alpha)
    return alpha / (sigma_p * 2.0 ** e * special.gamma(e))


def _oddroot(z, n):
    return np.sign(z) * np.abs(z) ** (1.0 / n)


def preset_alpha_particle(alpha: int, sigma_p: float, sigma_m: float) -> StochasticSystem:
    """Double integrator with process density ``c exp(-(v/sigma_p)^(2 alpha) / 2)``."""
    if isinstance(alpha, bool) or int(alpha) != alpha or alpha < 1:
        raise ModelError(f"alpha must be an integer >= 1, got {alpha!r}")
    alpha = int(alpha)
    _check_positive(sigma_p=sigma_p, sigma_m=sigma_m)
    base, lgs = preset_double_integrator(sigma_p, sigma_m)
    log_c = math.log(alpha_normalization(alpha, sigma_p))
    s2a = sigma_p ** (2 * alpha)

    def log_rho_v(t, v):
        return float(log_c - 0.5 * (v[0] / sigma_p) ** (2 * alpha))

    def dlog_rho_v_dv(t, v):
        return np.array([-(alpha / s2a) * v[0] ** (2 * alpha - 1)])

    def inv_dlog_rho_v(t, g):
        return np.array([_oddroot(-g[0] * s2a / alpha, 2 * alpha - 1)])

    return StochasticSystem(
        n_x=2, n_v=1, n_w=1, n_y=1,
        f=base.f, df_dx=base.df_dx, nu=base.nu, dnu_dv=base.dnu_dv,
        g=base.g, dg_dxdot=base.dg_dxdot, h=base.h, dh_dx=base.dh_dx,
        xi=base.xi, dxi_dw=base.dxi_dw,
        log_rho_v=log_rho_v, dlog_rho_v_dv=dlog_rho_v_dv,
        log_rho_w=base.log_rho_w, dlog_rho_w_dw=base.dlog_rho_w_dw,
        inv_dlog_rho_v=inv_dlog_rho_v,
        name="alpha",
        params={"alpha": alpha, "sigma_p": sigma_p, "sigma_m": sigma_m,
                "log_c_alpha": log_c, "g_zero": True},
        linear=lgs if alpha == 1 else None,
    )


def preset_pendulum(sigma_p: float, sigma_m: float) -> StochasticSystem:
    """Simple pendulum ``thetaddot + sin(theta) = v`` with angle measurements."""
    _check_positive(sigma_p=sigma_p, sigma_m=sigma_m)
    base, _ = preset_double_integrator(sigma_p, sigma_m)
    return StochasticSystem(
        n_x=2, n_v=1, n_w=1, n_y=1,
        f=lambda t, x: np.array([x[1], -math.sin(x[0])]),
        df_dx=lambda t, x: np.array([[0.0, 1.0], [-math.cos(x[0]), 0.0]]),
        nu=base.nu, dnu_dv=base.dnu_dv, g=base.g, dg_dxdot=base.dg_dxdot,
        h=base.h, dh_dx=base.dh_dx, xi=base.xi, dxi_dw=base.dxi_dw,
        log_rho_v=base.log_rho_v, dlog_rho_v_dv=base.dlog_rho_v_dv,
        log_rho_w=base.log_rho_w, dlog_rho_w_dw=base.dlog_rho_w_dw,
        inv_dlog_rho_v=base.inv_dlog_rho_v,
        name="pendulum",
        params={"sigma_p": sigma_p, "sigma_m": sigma_m, "g_zero": True},
    )


PRESETS = ("double-integrator", "harmonic", "alpha", "pendulum", "linear-custom")


def preset_by_name(name: str, params: Mapping) -> StochasticSystem:
    """Build a preset from its CLI name and a parameter mapping."""
    p = dict(params)
    try:
        if name == "double-integrator":
            return preset_double_integrator(p["sigma_p"], p["sigma_m"])[0]
        if name == "harmonic":
            return preset_harmonic(p["omega"], p["sigma_p"], p["sigma_m"])[0]
        if name == "alpha":
            return preset_alpha_particle(int(p["alpha"]), p["sigma_p"], p["sigma_m"])
        if name == "pendulum":
            return preset_pendulum(p["sigma_p"], p["sigma_m"])
        if name == "linear-custom":
            return system_from_linear(LinearGaussianSystem.from_dict(p), "linear-custom")
    except KeyError as exc:
        raise ModelError(f"preset {name!r} is missing parameter {exc.args[0]!r}") from None
    raise ModelError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
