"""Shared fixtures: bundled networks with their admittances and small hand-built networks."""

import numpy as np
import pytest

from helpers import Case, bundled, two_bus_network
from modules.netmodel import build_admittances


@pytest.fixture(scope="session")
def case9() -> Case:
    return bundled("case9")


@pytest.fixture(scope="session")
def case14() -> Case:
    return bundled("case14")


@pytest.fixture(scope="session")
def nesta5() -> Case:
    return bundled("nesta_case5_pjm")


@pytest.fixture(scope="session")
def toy2() -> Case:
    return bundled("toy2bus")


@pytest.fixture(scope="session")
def toy3() -> Case:
    return bundled("toy3bus")


@pytest.fixture
def single_line() -> Case:
    """One lossy line with unit tap, no charging and no shunts."""
    net = two_bus_network()
    return Case(net, build_admittances(net))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)
