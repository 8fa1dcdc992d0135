import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mona.scene import generate_scene, standard_config

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def scene():
    """The benchmark scene at seed 0."""
    return generate_scene(standard_config(0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
