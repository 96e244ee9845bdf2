import numpy as np
import pytest

from optspline.model import LinearGaussianSystem, MeasurementSet


def random_lgs(rng, n_x=None, n_v=1, n_y=1):
    """Random stable-ish linear-Gaussian system with well-conditioned noises."""
    n_x = int(rng.integers(1, 4)) if n_x is None else n_x
    A = 0.5 * rng.normal(size=(n_x, n_x))
    B = rng.normal(size=(n_x, n_v))
    C = rng.normal(size=(n_y, n_x))
    Lq = rng.normal(size=(n_v, n_v))
    Lr = rng.normal(size=(n_y, n_y))
    Q = Lq @ Lq.T + 0.5 * np.eye(n_v)
    R = 0.1 * (Lr @ Lr.T) + 0.05 * np.eye(n_y)
    return LinearGaussianSystem(A, B, C, np.eye(n_y), Q, R)


def random_measurements(rng, n_y=1, K=None, step=0.1):
    K = int(rng.integers(3, 9)) if K is None else K
    gaps = step * rng.integers(2, 6, size=K)
    times = np.concatenate([[0.0], np.cumsum(gaps)])
    return MeasurementSet(times, rng.normal(size=(K + 1, n_y)))


def uniform_measurements(values, f0, t0=0.0):
    values = np.asarray(values, dtype=float)
    times = t0 + np.arange(len(values)) / f0
    return MeasurementSet(times, values, f0=f0, uniform=True)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
