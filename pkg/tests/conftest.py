import numpy as np
import pytest

from holopf.mdhem import ScaleAssignment, run
from holopf.network import bundled_case


@pytest.fixture(scope="session")
def case3():
    return bundled_case("case3")


@pytest.fixture(scope="session")
def case4():
    return bundled_case("case4")


@pytest.fixture(scope="session")
def case4_qlim():
    return bundled_case("case4_qlim")


@pytest.fixture(scope="session")
def ieee14():
    return bundled_case("ieee14")


@pytest.fixture(scope="session")
def art4(case4):
    # full order 12, no early stop
    return run(case4, ScaleAssignment.per_bus(case4), M_max=12, tol=0.0)


@pytest.fixture(scope="session")
def art4_default(case4):
    return run(case4, ScaleAssignment.per_bus(case4), M_max=12, tol=1e-8)


@pytest.fixture
def rng():
    return np.random.default_rng(20261014)
