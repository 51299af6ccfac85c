import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from lsfm.certificates import random_mdp

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@st.composite
def small_mdps(draw, max_states=6, max_actions=3, gamma=None):
    seed = draw(st.integers(0, 2**32 - 1))
    num_states = draw(st.integers(2, max_states))
    num_actions = draw(st.integers(1, max_actions))
    g = gamma if gamma is not None else draw(st.floats(0.0, 0.95))
    return random_mdp(np.random.default_rng(seed), num_states, num_actions, g)


def random_policy(rng, num_states, num_actions):
    from lsfm.mdp import TabularPolicy
    return TabularPolicy(rng.dirichlet(np.ones(num_actions), size=num_states))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
