import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_study():
    """Three-engine synthetic study at one tenth of the full size."""
    from knocknet.synthetic import synthesize_study, three_engine_configs
    return synthesize_study(three_engine_configs(seed=0, scale=0.1))
