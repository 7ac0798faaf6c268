import numpy as np
import pytest
from hypothesis import settings

from idepde.sampled import make_rng

settings.register_profile("idepde", max_examples=40, deadline=None)
settings.load_profile("idepde")


@pytest.fixture
def rng():
    return make_rng(12345)


def levels(rng, count, pieces=8, amp=1.0):
    """Piecewise-constant random values with ``pieces`` equal pieces."""
    return np.repeat(rng.uniform(-amp, amp, pieces), count // pieces)
