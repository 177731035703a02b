import numpy as np
import pytest

from malab import CartesianGrid, PolarGrid, regime_from_alpha


@pytest.fixture(scope="session")
def regime0():
    return regime_from_alpha(0.0)


@pytest.fixture(scope="session")
def regime2():
    return regime_from_alpha(2.0)


@pytest.fixture(scope="session")
def regime6():
    return regime_from_alpha(6.0)


@pytest.fixture(scope="session")
def regime_m1():
    return regime_from_alpha(-1.0)


@pytest.fixture(scope="session")
def disc_257():
    return CartesianGrid.square(257)


@pytest.fixture(scope="session")
def polar_512():
    return PolarGrid.standard(512, 512)


def square_grid(n, half=1.0):
    """Full-square cartesian grid (radius large enough that nothing is masked)."""
    h = 2.0 * half / (n - 1)
    return CartesianGrid(n, n, -half, -half, h, h, radius=10.0)


@pytest.fixture(scope="session")
def alpha6_profile(regime6):
    from malab.homogeneous import find_profile, reconstruct_profile

    found = find_profile(3, regime6)
    assert found.c_star is not None
    return reconstruct_profile(found.c_star, 3, regime6)
