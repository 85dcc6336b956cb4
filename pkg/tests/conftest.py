import numpy as np
import pytest

from contactsde import catalog, geometry as geo


@pytest.fixture(scope="session")
def dissipative():
    return catalog.dissipative_system()


@pytest.fixture(scope="session")
def sasaki_einstein():
    return catalog.sasaki_einstein_system()


@pytest.fixture(scope="session")
def darboux1():
    """Minimal n=1 system used by bracket/vector-field unit tests."""
    return geo.HamiltonianSystem(geo.DarbouxChart(1), "p1^2/2 + q1^2/2 + 0.5*z")


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
