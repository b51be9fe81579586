import numpy as np
import pytest

from bifurcate.grid import DiscreteField, build_grid


@pytest.fixture(scope="session")
def domain():
    """The production grid: 399 interior nodes on (0, 1)."""
    return build_grid(399, 1.0)


@pytest.fixture(scope="session")
def coarse_domain():
    return build_grid(49, 1.0)


@pytest.fixture(scope="session")
def harvest_field(domain):
    """Interior-peaked harvest profile x(1-x)^2."""
    x = domain.nodes
    return DiscreteField(domain, x * (1.0 - x) ** 2)
