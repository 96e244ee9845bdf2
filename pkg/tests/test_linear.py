import numpy as np
import pytest
from scipy import integrate, linalg

from conftest import random_lgs, random_measurements, uniform_measurements
from optspline.linear import (DegenerateSystemError, assemble_junction_system,
                              cubic_coefficients, cubic_from_coefficients, segment_gramian,
                              solve_spline)
from optspline.model import (LinearGaussianSystem, MeasurementSet, ModelError,
                             preset_double_integrator, preset_harmonic)
from optspline.optimality import junction_residuals, verify
from optspline.simkit import solve_discretized_mle
from optspline.spline import HorizonError, Spline, divided_difference, eval_spline


def test_gramian_scalar():
    np.testing.assert_allclose(segment_gramian([[0.0]], [[1.0]], [[2.5]], 0.8), [[2.0]])


@pytest.mark.parametrize("delta", [0.1, 0.5, 2.0])
def test_gramian_double_integrator_closed_form(delta):
    _, lgs = preset_double_integrator(4.0, 1.0)
    expected = 16.0 * np.array([[delta ** 3 / 3, -delta ** 2 / 2], [-delta ** 2 / 2, delta]])
    np.testing.assert_allclose(segment_gramian(lgs.A, lgs.B, lgs.Q, delta), expected,
                               rtol=1e-13, atol=1e-15)


def test_gramian_harmonic_matches_quadrature():
    _, lgs = preset_harmonic(1.0, 1.0, 1.0)
    delta = 1.3
    G = segment_gramian(lgs.A, lgs.B, lgs.Q, delta)

    def entry(i, j):
        def integrand(s):
            e = linalg.expm(-lgs.A * s) @ lgs.B
            return (e @ lgs.Q @ e.T)[i, j]
        return integrate.quad(integrand, 0, delta, epsabs=1e-14, epsrel=1e-13)[0]

    Gq = np.array([[entry(i, j) for j in range(2)] for i in range(2)])
    np.testing.assert_allclose(G, Gq, atol=1e-10)
    np.testing.assert_array_equal(G, G.T)
    assert np.all(np.linalg.eigvalsh(G) >= -1e-14)


def test_gramian_zero_length_and_overflow():
    np.testing.assert_array_equal(segment_gramian([[1.0]], [[1.0]], [[1.0]], 0.0), [[0.0]])
    with pytest.raises(FloatingPointError):
        segment_gramian([[800.0]], [[1.0]], [[1.0]], 10.0)


def test_junction_system_size():
    _, lgs = preset_double_integrator(1.0, 1.0)
    M, b = assemble_junction_system(lgs, MeasurementSet([0.0, 1.0, 2.0], [0.0, 1.0, 0.0]))
    assert M.shape == (8, 8) and b.shape == (8,)


def test_line_data_is_reproduced_exactly():
    sys, lgs = preset_double_integrator(3.0, 0.7)
    t = np.linspace(0.0, 2.0, 9)
    ms = MeasurementSet(t, 2 * t + 1)
    spline = solve_spline(sys, ms)
    assert max(np.abs(s.c_lambda).max() for s in spline.segments) < 1e-12
    ts = np.random.default_rng(0).uniform(0.0, 2.0, 20)
    X, _ = spline.sample(ts)
    np.testing.assert_allclose(X[:, 0], 2 * ts + 1, atol=1e-12)


def test_matches_discretized_oracle(rng):
    lgs = random_lgs(rng, n_x=2)
    ms = random_measurements(rng, K=4)
    spline = solve_spline(lgs, ms)
    oracle = solve_discretized_mle(lgs, ms, 1e-3)
    knot_states = oracle.states[oracle.meta["knot_index"]]
    np.testing.assert_allclose(spline.knots.x, knot_states, atol=1e-3)
    mid = 0.5 * (oracle.times[:-1] + oracle.times[1:])[::25]
    X, _ = spline.sample(mid)
    ref = np.array([np.interp(mid, oracle.times, oracle.states[:, i]) for i in range(2)]).T
    np.testing.assert_allclose(X, ref, atol=1e-3)


def test_interpolation_limit():
    sys, lgs = preset_double_integrator(1.0, 1e-6)
    rng = np.random.default_rng(1)
    ms = uniform_measurements(np.cumsum(rng.normal(size=11)), 2.0)
    spline = solve_spline(lgs, ms)
    assert np.abs(spline.knots.x[:, 0] - ms.values[:, 0]).max() <= 1e-4


def test_segments_are_cubic():
    sys, lgs = preset_double_integrator(4.0, 1.0)
    rng = np.random.default_rng(2)
    ms = uniform_measurements(rng.normal(size=12), 5.0)
    spline = solve_spline(lgs, ms)
    for seg in spline.segments:
        ts = np.linspace(seg.t_start, seg.t_end, 5)
        assert abs(divided_difference(ts, seg.x(ts)[:, 0])) <= 1e-6


def test_eval_at_knots_and_continuity(rng):
    lgs = random_lgs(rng, n_x=3)
    ms = random_measurements(rng, K=5)
    spline = solve_spline(lgs, ms)
    for k in range(1, ms.K):
        left = spline.segments[k - 1].x(ms.times[k])
        right = spline.segments[k].x(ms.times[k])
        np.testing.assert_allclose(left, spline.knots.x[k], atol=1e-9)
        np.testing.assert_allclose(right, spline.knots.x[k], atol=1e-9)
        x, v, lam = eval_spline(spline, ms.times[k])
        np.testing.assert_array_equal(x, spline.knots.x[k])
    with pytest.raises(HorizonError):
        eval_spline(spline, ms.times[-1] + 1e-3)
    with pytest.raises(HorizonError):
        spline.sample([ms.times[0] - 1.0])


def test_cubic_coefficients_zero_dual():
    sys, lgs = preset_double_integrator(1.0, 1.0)
    t = np.linspace(0.0, 1.0, 5)
    spline = solve_spline(lgs, MeasurementSet(t, 3 - t))
    for k in range(4):
        a, b, c, d = cubic_coefficients(spline, k)
        assert abs(a) < 1e-12 and abs(b) < 1e-12
        np.testing.assert_allclose([c, d], spline.knots.x[k][::-1], atol=1e-12)


def test_cubic_coefficients_roundtrip_and_jump():
    sys, lgs = preset_double_integrator(4.0, 1.0)
    rng = np.random.default_rng(3)
    ms = uniform_measurements(rng.normal(size=8), 5.0)
    spline = solve_spline(lgs, ms)
    sp = 4.0
    f0 = 5.0
    for k, seg in enumerate(spline.segments):
        a, b, c, d = cubic_coefficients(spline, k)
        ts = np.linspace(seg.t_start, seg.t_end, 10)
        x1, x2, l1, l2 = cubic_from_coefficients(a, b, c, d, sp, ts - seg.t_start)
        X, _ = spline.sample(ts[1:-1])
        np.testing.assert_allclose(x1[1:-1], X[:, 0], atol=1e-10)
        np.testing.assert_allclose(x2[1:-1], X[:, 1], atol=1e-10)
        np.testing.assert_allclose(np.column_stack([l1, l2]), seg.lam(ts), atol=1e-10)
    # one-sided limits rebuilt from (a, b) satisfy the jump condition at interior knots
    for k in range(1, ms.K):
        a0, b0, _, _ = cubic_coefficients(spline, k - 1)
        a1, b1, _, _ = cubic_coefficients(spline, k)
        lam_minus = np.array([-a0, a0 * 0.2 + b0])
        lam_plus = np.array([-a1, b1])
        eta = ms.values[k, 0] - spline.knots.x[k, 0]
        r27 = f0 * (lam_plus - lam_minus) + np.array([eta, 0.0])
        assert np.abs(r27).max() <= 1e-8


def test_cubic_coefficients_need_double_integrator():
    _, lgs = preset_harmonic(1.0, 1.0, 1.0)
    spline = solve_spline(lgs, MeasurementSet([0.0, 1.0], [0.0, 1.0]))
    with pytest.raises(ModelError):
        cubic_coefficients(spline, 0)


def test_superposition(rng):
    lgs = random_lgs(rng, n_x=2)
    ms1 = random_measurements(rng, K=6)
    ms2 = MeasurementSet(ms1.times, rng.normal(size=ms1.values.shape))
    ms3 = MeasurementSet(ms1.times, ms1.values + ms2.values)
    x1, x2, x3 = (solve_spline(lgs, m).knots.x for m in (ms1, ms2, ms3))
    np.testing.assert_allclose(x1 + x2, x3, atol=1e-9)


def test_harmonic_segments_are_modified_harmonic():
    omega = 2.0
    _, lgs = preset_harmonic(omega, 1.0, 0.3)
    rng = np.random.default_rng(4)
    ms = uniform_measurements(rng.normal(size=6), 1.0)
    spline = solve_spline(lgs, ms)
    for seg in spline.segments:
        ts = np.linspace(seg.t_start, seg.t_end, 8)
        basis = np.column_stack([np.sin(omega * ts), ts * np.sin(omega * ts),
                                 np.cos(omega * ts), ts * np.cos(omega * ts)])
        x1 = seg.x(ts)[:, 0]
        coef, *_ = np.linalg.lstsq(basis, x1, rcond=None)
        assert np.abs(basis @ coef - x1).max() <= 1e-8


def test_small_process_noise_gives_least_squares_line():
    sys, lgs = preset_double_integrator(1e-6, 1.0)
    rng = np.random.default_rng(5)
    t = np.linspace(0.0, 3.0, 7)
    y = 0.5 - 1.2 * t + rng.normal(size=7)
    spline = solve_spline(lgs, MeasurementSet(t, y))
    slope, icept = np.polyfit(t, y, 1)
    np.testing.assert_allclose(spline.knots.x[:, 0], icept + slope * t, atol=1e-4)


def test_outputs_verify(rng):
    for _ in range(3):
        lgs = random_lgs(rng)
        ms = random_measurements(rng)
        spline = solve_spline(lgs, ms)
        from optspline.model import system_from_linear
        bundle = verify(system_from_linear(lgs), ms, spline)
        assert bundle.ok(1e-7), bundle.to_dict()
        assert bundle.max_residual <= 1e-8


def test_knot_residuals_are_tiny(rng):
    from optspline.model import system_from_linear
    lgs = random_lgs(rng, n_x=2)
    ms = random_measurements(rng, K=5)
    spline = solve_spline(lgs, ms)
    sys = system_from_linear(lgs)
    for k in range(ms.K + 1):
        for r in junction_residuals(sys, spline, k, ms.values[k]):
            assert np.abs(r).max() <= 1e-8


def test_unobservable_system_is_degenerate():
    lgs = LinearGaussianSystem([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]], [[0.0, 0.0]], [[1.0]],
                               [[1.0]], [[1.0]])
    with pytest.raises(DegenerateSystemError, match="degenerate junction system") as exc:
        solve_spline(lgs, MeasurementSet([0.0, 1.0, 2.0], [0.0, 1.0, 2.0]))
    assert exc.value.condition > 1e15


def test_dimension_mismatch():
    _, lgs = preset_double_integrator(1.0, 1.0)
    with pytest.raises(ModelError):
        solve_spline(lgs, MeasurementSet([0.0, 1.0], [[0.0, 1.0], [1.0, 2.0]]))


def test_json_roundtrip(tmp_path, rng):
    lgs = random_lgs(rng, n_x=2)
    ms = random_measurements(rng, K=4)
    spline = solve_spline(lgs, ms)
    path = tmp_path / "s.json"
    text = spline.to_json(path)
    again = Spline.from_json(path)
    assert again.to_json() == text
    ts = np.linspace(ms.times[0], ms.times[-1], 31)
    np.testing.assert_allclose(again.sample(ts)[0], spline.sample(ts)[0], rtol=0, atol=1e-14)
    assert len(spline.to_dict()["segments"]) * 2 * 2 == 2 * lgs.n_x * ms.K
