import numpy as np
import pytest

from slowfast_ldp.model import EdgeSet, FiniteChain, ModelSpec, TorusDiffusion, validate_model


def two_state_fast_model():
    """Two species, fast chain on {0, 1} switching at rate 1, rates depending on z."""
    edges = EdgeSet(2, ((0, 1, "1 + 2*z"), (1, 0, "2 - z")))
    return validate_model(ModelSpec(edges, FiniteChain(((None, "1"), ("1", None))), name="switch"))


def three_species_model():
    edges = EdgeSet(3, ((0, 1, "1 + z + mu[1]"), (1, 0, "2 - z"), (1, 2, "1 + 0.5*z"),
                        (2, 0, "0.5 + mu[0]*z"), (2, 1, "1")))
    fast = FiniteChain(((None, "1 + mu[0]"), ("2", None)))
    return validate_model(ModelSpec(edges, fast, name="three"))


def torus_model(N=32):
    edges = EdgeSet(2, ((0, 1, "1 + 0.5*sin(2*pi*z)"), (1, 0, "1 + 0.3*cos(2*pi*z) + mu[0]")))
    fast = TorusDiffusion("0.5*sin(2*pi*z) + mu[0]", "0.1 + 0.05*cos(2*pi*z)", N)
    return validate_model(ModelSpec(edges, fast, name="torus"))


def constant_rate_model(rho=1.0, q=2):
    edges = EdgeSet(q, ((0, 1, str(rho)), (1, 0, str(rho))))
    return validate_model(ModelSpec(edges, FiniteChain(((None, "1"), ("1", None)))))


@pytest.fixture
def switch_model():
    return two_state_fast_model()


@pytest.fixture
def three_model():
    return three_species_model()


@pytest.fixture
def torus():
    return torus_model()


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)
