import json
import math

import numpy as np
import pytest

from conftest import random_lgs, random_measurements, uniform_measurements
from optspline.linear import solve_spline
from optspline.model import (MeasurementSet, preset_double_integrator, preset_harmonic,
                             system_from_linear)
from optspline.optimality import (Candidate, PathSegment, interval_residuals,
                                  junction_residuals, sample_grid, verify)
from optspline.spline import KnotValues, LinearModel, LinearSegment


@pytest.fixture
def di_case():
    sys, lgs = preset_double_integrator(4.0, 1.0)
    rng = np.random.default_rng(11)
    ms = uniform_measurements(np.cumsum(rng.normal(size=9)), 5.0)
    return sys, lgs, ms, solve_spline(lgs, ms)


@pytest.mark.parametrize("derivatives", ["auto", "fd"])
def test_closed_form_segment_midpoints(di_case, derivatives):
    sys, _, ms, spline = di_case
    for k in range(ms.K):
        t = 0.5 * (ms.times[k] + ms.times[k + 1])
        for r in interval_residuals(sys, spline, t, derivatives):
            assert np.abs(r).max() <= 1e-8


def test_free_motion_has_zero_residuals():
    sys, _ = preset_harmonic(1.0, 1.0, 1.0)
    seg = PathSegment(x=lambda t: np.array([math.cos(t), -math.sin(t)]),
                      lam=lambda t: np.zeros(2), v=lambda t: np.zeros(1),
                      xdot=lambda t: np.array([-math.sin(t), -math.cos(t)]),
                      lamdot=lambda t: np.zeros(2))
    cand = Candidate(np.array([0.0, 1.0]), [seg], None)
    for r in interval_residuals(sys, cand, 0.4):
        np.testing.assert_array_equal(r, 0.0)


@pytest.mark.parametrize("derivatives", ["auto", "fd"])
def test_random_harmonic_segment(derivatives):
    _, lgs = preset_harmonic(2.0, 0.7, 1.0)
    sys = system_from_linear(lgs)
    rng = np.random.default_rng(12)
    model = LinearModel(lgs.A, lgs.B, lgs.Q)
    seg = LinearSegment(0.0, 1.0, rng.normal(size=2), rng.normal(size=2), model)
    cand = Candidate(np.array([0.0, 1.0]), [seg], None)
    for t in (0.1, 0.5, 0.93):
        for r in interval_residuals(sys, cand, t, derivatives):
            assert np.abs(r).max() <= 1e-8


def test_interval_residuals_reject_knots(di_case):
    sys, _, ms, spline = di_case
    with pytest.raises(ValueError):
        interval_residuals(sys, spline, ms.times[2])
    with pytest.raises(ValueError):
        interval_residuals(sys, spline, ms.times[-1] + 1.0)


def line_candidate(sys, t, slope, icept):
    K = t.size - 1
    x = np.column_stack([icept + slope * t, np.full(t.size, slope)])
    zeros = np.zeros((K + 1, 2))
    kv = KnotValues(x=x, xdot=x @ np.array([[0, 0], [1, 0]]), v=np.zeros((K + 1, 1)),
                    w=np.zeros((K + 1, 1)), lam=zeros, eta=np.zeros((K + 1, 1)),
                    lam_minus=zeros, lam_plus=zeros)
    seg = PathSegment(x=lambda s: np.array([icept + slope * s, slope]),
                      lam=lambda s: np.zeros(2), v=lambda s: np.zeros(1))
    return Candidate(t, [seg] * K, kv)


def test_line_junctions_are_zero():
    sys, _ = preset_double_integrator(1.0, 1.0)
    t = np.linspace(0.0, 1.0, 5)
    cand = line_candidate(sys, t, 2.0, 1.0)
    for k in range(5):
        for r in junction_residuals(sys, cand, k, [2.0 * t[k] + 1.0]):
            np.testing.assert_array_equal(r, 0.0)
    with pytest.raises(IndexError):
        junction_residuals(sys, cand, 5, [0.0])
    bundle = verify(sys, MeasurementSet(t, 2 * t + 1), cand)
    assert bundle.max_residual < 1e-9


def test_knot_perturbation_is_detected(di_case):
    sys, _, ms, spline = di_case
    x = np.array(spline.knots.x)
    x[3, 0] += 1e-3
    bad = spline.with_knots(x=x)
    r = junction_residuals(sys, bad, 3, ms.values[3])
    assert max(np.abs(r[3]).max(), np.abs(r[4]).max()) > 1e-6


def test_mismatched_system_fails_r22(di_case):
    _, _, ms, _ = di_case
    _, harm = preset_harmonic(1.0, 4.0, 1.0)
    sys, _ = preset_double_integrator(4.0, 1.0)
    bundle = verify(sys, ms, solve_spline(harm, ms))
    assert "r22" in bundle.violations()


def test_nonzero_boundary_limit_fails_r27(di_case):
    sys, _, ms, spline = di_case
    lm = np.array(spline.knots.lam_minus)
    lm[0] = [0.3, -0.1]
    bundle = verify(sys, ms, spline.with_knots(lam_minus=lm))
    assert bundle.violations() == ["r27"]
    assert bundle.entries["r27"].k == 0


def test_lambda_at_knot_is_checked(di_case):
    sys, _, ms, spline = di_case
    lam = np.array(spline.knots.lam)
    lam[2] = [0.0, 1e-3]
    bundle = verify(sys, ms, spline.with_knots(lam=lam))
    assert "r26_lambda" in bundle.violations()


def test_grid_refinement_is_monotone(rng):
    lgs = random_lgs(rng, n_x=2)
    ms = random_measurements(rng, K=4)
    spline = solve_spline(lgs, ms)
    # a mismatched model gives residuals that vary along the segments
    other = system_from_linear(random_lgs(np.random.default_rng(0), n_x=2))
    last = None
    for n in (2, 4, 8, 16):
        bundle = verify(other, ms, spline, grid_per_interval=n)
        values = {k: bundle[k] for k in ("r21", "r22", "r23")}
        if last is not None:
            assert all(values[k] >= last[k] for k in values)
        last = values


def test_sample_grid_is_nested():
    times = np.array([0.0, 1.0, 3.0])
    coarse = np.concatenate([ts for _, ts in sample_grid(times, 4)])
    fine = np.concatenate([ts for _, ts in sample_grid(times, 8)])
    assert np.all(np.isin(coarse, fine))


def test_verify_rejects_small_grid_and_wrong_times(di_case):
    sys, _, ms, spline = di_case
    with pytest.raises(ValueError):
        verify(sys, ms, spline, grid_per_interval=1)
    other = MeasurementSet(ms.times + 0.01, ms.values)
    with pytest.raises(ValueError):
        verify(sys, other, spline)


def test_bundle_json(di_case):
    sys, _, ms, spline = di_case
    data = json.loads(verify(sys, ms, spline).to_json())
    for key in ("r21", "r22", "r23", "r24", "r25", "r26", "r27", "r28", "r29"):
        assert set(data[key]) == {"max_abs", "argmax"}
        assert set(data[key]["argmax"]) == {"t", "k"}
    assert data["verified"] is True and data["violations"] == []
    assert data["phi"] <= 1e-8 and data["psi"] <= 1e-8
