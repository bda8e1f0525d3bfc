import numpy as np
import pytest

from rexiprop import JoukowskiMap, faber_cf


@pytest.fixture(scope="session")
def flagship():
    """The degree-16 approximation on i*[-10, 10] used throughout."""
    return faber_cf(JoukowskiMap(10.0))


@pytest.fixture(scope="session")
def interval_grid():
    return np.linspace(-10.0, 10.0, 100_001)
