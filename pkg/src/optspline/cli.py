"""Command-line front end: ``optspline simulate | enrich | verify | compare``.

Exit codes: 0 success, 1 validation or verification failure, 2 I/O or
configuration error. Every command is a pure function of its configuration
and input files, so repeated runs write byte-identical outputs.

Configuration precedence for ``simulate``: command-line flags override keys of
the JSON config file, which override built-in defaults.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, tolerances
from .linear import DegenerateSystemError, solve_spline
from .model import (PRESETS, MeasurementSet, ModelError, TimeHorizon, preset_by_name,
                    preset_double_integrator, preset_harmonic)
from .nonlinear import NewtonError, solve_alpha, solve_collocation
from .optimality import verify
from .simkit import (SCHEMES, SimConfig, Trajectory, finite_difference_velocity,
                     sample_measurements, simulate)
from .spline import Spline

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2
METHODS = ("optimal-spline", "cubic-spline", "harmonic-spline", "finite-difference")


class ConfigError(Exception):
    """Unreadable or inconsistent configuration (exit code 2)."""


def _dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _write(path, text: str):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from None


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _parse_params(pairs) -> dict:
    out = {}
    for item in pairs or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--param expects KEY=VALUE, got {item!r}")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            raise ConfigError(f"--param {key}: value {value!r} is not a number or JSON") from None
    return out


def _system(preset: str, params: dict):
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    try:
        return preset_by_name(preset, params)
    except ModelError as exc:
        raise ConfigError(str(exc)) from None


def _measurements(path, f0=None) -> MeasurementSet:
    if not Path(path).is_file():
        raise ConfigError(f"measurements file not found: {path}")
    try:
        return MeasurementSet.from_csv(path, f0=f0, uniform=f0 is not None)
    except ValueError as exc:
        if isinstance(exc, ModelError):
            raise
        raise ModelError(f"{path}: {exc}") from None


def solve_for(system, ms: MeasurementSet, m: int = 5) -> Spline:
    """Pick the solver that fits ``system``: closed form, alpha Newton or collocation."""
    if system.linear is not None:
        return solve_spline(system, ms)
    if system.name == "alpha":
        return solve_alpha(system, ms)
    return solve_collocation(system, ms, m=m)


def _dense_times(times, per_interval: int) -> np.ndarray:
    frac = np.arange(per_interval) / per_interval
    pts = [t0 + frac * (t1 - t0) for t0, t1 in zip(times[:-1], times[1:])]
    return np.concatenate(pts + [times[-1:]])


def _table(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    conf = _read_json(args.config) if args.config else {}
    flags = {
        "preset": args.preset, "dt": args.dt, "f0": args.f0, "seed": args.seed,
        "scheme": args.scheme, "x0": args.x0,
    }
    for key, value in flags.items():
        if value is not None:
            conf[key] = value
    if args.t0 is not None or args.tK is not None:
        hz = list(conf.get("horizon", [0.0, 10.0]))
        if args.t0 is not None:
            hz[0] = args.t0
        if args.tK is not None:
            hz[1] = args.tK
        conf["horizon"] = hz
    params = dict(conf.get("params", {}))
    params.update(_parse_params(args.param))
    if args.sigma_p is not None:
        params["sigma_p"] = args.sigma_p
    if args.sigma_m is not None:
        params["sigma_m"] = args.sigma_m
    preset = conf.get("preset", "double-integrator")
    # simulation draws its own noise; the preset only supplies f, nu and h, so a
    # zero noise scale is legal here and is replaced by a placeholder for the build
    structure = dict(params)
    for key in ("sigma_p", "sigma_m"):
        if structure.get(key) == 0:
            structure[key] = 1.0
    system = _system(preset, structure)
    try:
        horizon = conf.get("horizon", [0.0, 10.0])
        cfg = SimConfig(
            dt=float(conf.get("dt", 0.01)),
            horizon=TimeHorizon(float(horizon[0]), float(horizon[1])),
            x0=tuple(conf.get("x0", [0.0] * system.n_x)),
            sigma_p=float(params["sigma_p"]),
            f0=float(conf.get("f0", 1.0)),
            sigma_m=float(params["sigma_m"]),
            seed=int(conf.get("seed", 0)),
            scheme=conf.get("scheme", "euler-maruyama"),
        )
    except KeyError as exc:
        raise ConfigError(f"missing parameter {exc.args[0]!r}") from None
    except (ModelError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid simulation config: {exc}") from None
    traj = simulate(cfg, system)
    ms = sample_measurements(traj, cfg.f0, cfg.sigma_m, cfg.seed, h=system.h)
    out = Path(args.out_dir)
    _write(out / conf.get("trajectory", "trajectory.csv"), traj.to_csv())
    _write(out / conf.get("measurements", "measurements.csv"), ms.to_csv())
    manifest = {
        "seed": cfg.seed, "scheme": cfg.scheme, "preset": preset,
        "params": dict(params, dt=cfg.dt, horizon=[cfg.horizon.t0, cfg.horizon.tK],
                       x0=list(cfg.x0), f0=cfg.f0),
        "tool_version": __version__,
    }
    _write(out / conf.get("manifest", "manifest.json"), _dumps(manifest))
    return EXIT_OK


def cmd_enrich(args) -> int:
    system = _system(args.preset, _parse_params(args.param))
    ms = _measurements(args.measurements, args.f0)
    spline = solve_for(system, ms, m=args.m)
    _write(args.spline, spline.to_json())
    if args.samples:
        ts = _dense_times(ms.times, args.points_per_interval)
        X, V = spline.sample(ts)
        header = ["t"] + [f"x{i + 1}" for i in range(X.shape[1])] + \
            [f"v{i + 1}" for i in range(V.shape[1])]
        _write(args.samples, _table(header, np.column_stack([ts, X, V])))
    return EXIT_OK


def cmd_verify(args) -> int:
    system = _system(args.preset, _parse_params(args.param))
    ms = _measurements(args.measurements, args.f0)
    try:
        spline = Spline.from_json(Path(args.spline))
    except OSError as exc:
        raise ConfigError(f"cannot read {args.spline}: {exc.strerror}") from None
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{args.spline}: malformed spline document ({exc})") from None
    bundle = verify(system, ms, spline, grid_per_interval=args.grid, tol=args.tol)
    text = bundle.to_json()
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    if not bundle.ok():
        print(f"verification failed: {', '.join(bundle.violations())}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def _method_estimate(method, ms, params, system, ts, m):
    if method == "finite-difference":
        pos = np.interp(ts, ms.times, ms.values[:, 0])
        return np.column_stack([pos, finite_difference_velocity(ms)(ts)])
    if method == "optimal-spline":
        spline = solve_for(system, ms, m=m)
    else:
        try:
            sp, sm = params["sigma_p"], params["sigma_m"]
            if method == "cubic-spline":
                _, lgs = preset_double_integrator(sp, sm)
            else:
                _, lgs = preset_harmonic(params["omega"], sp, sm)
        except KeyError as exc:
            raise ConfigError(f"{method} needs parameter {exc.args[0]!r}") from None
        spline = solve_spline(lgs, ms)
    X, _ = spline.sample(ts)
    return X


def cmd_compare(args) -> int:
    methods = [s.strip() for s in args.methods.split(",") if s.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if unknown or not methods:
        print(f"error: unknown method(s) {', '.join(unknown) or '(none)'}; "
              f"valid methods: {', '.join(METHODS)}", file=sys.stderr)
        return EXIT_INVALID
    params = _parse_params(args.param)
    system = _system(args.preset, params)
    ms = _measurements(args.measurements, args.f0)
    if not Path(args.truth).is_file():
        raise ConfigError(f"truth file not found: {args.truth}")
    truth = Trajectory.from_csv(args.truth)
    t0, tK = ms.times[0], ms.times[-1]
    eps = 1e-9 * max(1.0, abs(tK))
    if truth.times[0] > t0 + eps or truth.times[-1] < tK - eps:
        raise ModelError("truth trajectory does not cover the measurement horizon")
    sel = (truth.times >= t0 - eps) & (truth.times <= tK + eps)
    ts = np.clip(truth.times[sel], t0, tK)
    ref = truth.states[sel]
    metrics = {}
    out = Path(args.out_dir)
    for method in methods:
        est = _method_estimate(method, ms, params, system, ts, args.m)
        entry = {"position_rmse": float(np.sqrt(np.mean((est[:, 0] - ref[:, 0]) ** 2)))}
        if ref.shape[1] > 1 and est.shape[1] > 1:
            entry["velocity_rmse"] = float(np.sqrt(np.mean((est[:, 1] - ref[:, 1]) ** 2)))
        knots = np.searchsorted(ts, ms.times)
        hit = knots < ts.size
        hit[hit] = np.abs(ts[knots[hit]] - ms.times[hit]) <= eps
        if hit.any():
            entry["knot_position_rmse"] = float(
                np.sqrt(np.mean((est[knots[hit], 0] - ref[knots[hit], 0]) ** 2)))
        metrics[method] = entry
        header = ["t"] + [f"x{i + 1}" for i in range(est.shape[1])]
        _write(out / f"{method}.csv", _table(header, np.column_stack([ts, est])))
    _write(out / "metrics.json", _dumps({"methods": metrics, "n_points": int(ts.size)}))
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def _add_model_args(p, required=True):
    p.add_argument("--preset", required=required, help=f"one of: {', '.join(PRESETS)}")
    p.add_argument("--param", action="append", metavar="KEY=VALUE",
                   help="preset parameter; VALUE is parsed as JSON (repeatable)")
    p.add_argument("--f0", type=float, help="declare uniform sampling at this frequency")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="optspline", description="Maximum-likelihood optimal splines for stochastic systems.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a trajectory and sample measurements")
    p.add_argument("--config", help="JSON config file; flags override its keys")
    p.add_argument("--preset")
    p.add_argument("--param", action="append", metavar="KEY=VALUE")
    p.add_argument("--sigma-p", dest="sigma_p", type=float)
    p.add_argument("--sigma-m", dest="sigma_m", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--t0", type=float)
    p.add_argument("--tK", type=float)
    p.add_argument("--x0", type=float, nargs="+")
    p.add_argument("--f0", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--scheme", choices=SCHEMES)
    p.add_argument("--out-dir", default=".", help="directory for the output files")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("enrich", help="compute the optimal spline of a measurement file")
    p.add_argument("measurements")
    _add_model_args(p)
    p.add_argument("--spline", required=True, help="output spline JSON")
    p.add_argument("--samples", help="output dense-samples CSV")
    p.add_argument("--points-per-interval", type=int, default=100)
    p.add_argument("--m", type=int, default=5, help="collocation nodes per interval")
    p.set_defaults(func=cmd_enrich)

    p = sub.add_parser("verify", help="check a spline against the optimality conditions")
    p.add_argument("spline")
    p.add_argument("measurements")
    _add_model_args(p)
    p.add_argument("--tol", type=float, default=tolerances.VERIFY_TOL)
    p.add_argument("--grid", type=int, default=8, help="sample points per interval")
    p.add_argument("--out", help="report path (default: stdout)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("compare", help="RMSE of several estimators against a truth trajectory")
    p.add_argument("measurements")
    p.add_argument("truth")
    _add_model_args(p)
    p.add_argument("--methods", default="optimal-spline,cubic-spline,finite-difference",
                   help=f"comma-separated subset of: {', '.join(METHODS)}")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--m", type=int, default=5)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ModelError, DegenerateSystemError, NewtonError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc, NewtonError):
            print(f"residual history: {exc.history}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
