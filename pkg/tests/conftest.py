import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("default")


@pytest.fixture
def quartic_fs():
    from flashopt.oracle import make_test_problem

    return make_test_problem("separable-quartic", 10, 100, seed=0)


@pytest.fixture
def rng():
    from flashopt.rng import make_rng

    return make_rng(1234)


def planted(diag):
    from flashopt.oracle import quadratic_problem

    return quadratic_problem(np.diag(np.asarray(diag, dtype=float)))
