import numpy as np
import pytest

from mpamp.priors import Prior
from mpamp.state_evolution import SystemConfig


@pytest.fixture(scope="session")
def bg01():
    return Prior.bernoulli_gaussian(0.1)


@pytest.fixture(scope="session")
def bg02():
    return Prior.bernoulli_gaussian(0.2)


@pytest.fixture(scope="session")
def gauss():
    return Prior.bernoulli_gaussian(1.0)


@pytest.fixture(scope="session")
def mixture():
    return Prior.gaussian_mixture(
        weights=[0.5, 0.3, 0.2], means=[0.0, -1.5, 2.0], variances=[0.1, 0.8, 1.0]
    )


@pytest.fixture(scope="session")
def sensor_config(bg01):
    """Sparse signal at measurement rate 0.4 and -26 dB noise, 100 nodes."""
    return SystemConfig(prior=bg01, kappa=0.4, sigma_z2=1.0 / 400.0, nodes=100)


@pytest.fixture(scope="session")
def growth_config(bg02):
    """Dense-measurement setting used for rate-growth studies."""
    return SystemConfig(prior=bg02, kappa=1.0, sigma_z2=0.01, nodes=100)


@pytest.fixture(scope="session")
def small_config(bg01):
    """Cheap setting for scheduler unit tests."""
    return SystemConfig(prior=bg01, kappa=0.5, sigma_z2=0.01, nodes=100)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
