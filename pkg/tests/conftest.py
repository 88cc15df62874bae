import numpy as np
import pytest

from skclib.spectral import SpectralKoopman


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_stable_koopman(rng, m=4, u=1, dt=0.05):
    mu = rng.uniform(-0.5, -0.01, size=m)
    omega = rng.uniform(-3.0, 3.0, size=m)
    L = rng.normal(size=(m, u)) + 1j * rng.normal(size=(m, u))
    return SpectralKoopman(mu, omega, L, dt)


@pytest.fixture
def koopman(rng):
    return random_stable_koopman(rng)


def finite_difference(f, x, eps=1e-6):
    """Central-difference gradient of scalar f at real array x."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[i] = eps
        g[i] = (f(x + e) - f(x - e)) / (2 * eps)

    return g
