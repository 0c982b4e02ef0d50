import numpy as np
import pytest

from ddsmpc.core.scenario import load_scenario
from ddsmpc.services import experiments
from ddsmpc.services.lti_sim import LtiSystem, NoiseSpec

# Shortened scalar benchmark: horizon 5, 40 Hankel samples.
SMALL_SCALAR = {
    "ocp": {"N": 5},
    "data": {"T": 40, "estimation_length": 200},
    "run": {"steps": 6},
}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def scalar_system():
    return LtiSystem(np.array([[2.0]]), np.array([[1.0]]))


@pytest.fixture
def scalar_noise():
    return NoiseSpec.gaussian_diag([0.25])


@pytest.fixture(scope="session")
def small_scalar_cfg():
    return load_scenario("scalar-gaussian", overrides=SMALL_SCALAR)


@pytest.fixture(scope="session")
def small_scalar_data(small_scalar_cfg):
    """Collected once per session; tests must not mutate it."""
    return experiments.collect(small_scalar_cfg)


@pytest.fixture(scope="session")
def aircraft_cfg():
    return load_scenario("aircraft")


@pytest.fixture
def aircraft_system(aircraft_cfg):
    return experiments.build_system(aircraft_cfg)


@pytest.fixture
def make_stable_system():
    """Factory for random (A, B) pairs with A scaled to spectral radius 0.9."""

    def _make(rng: np.random.Generator, n_x: int, n_u: int) -> LtiSystem:
        A = rng.standard_normal((n_x, n_x))
        A *= 0.9 / np.max(np.abs(np.linalg.eigvals(A)))
        return LtiSystem(A, rng.standard_normal((n_x, n_u)))

    return _make
