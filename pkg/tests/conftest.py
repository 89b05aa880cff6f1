import numpy as np
import pytest

from impstab.fixtures import (
    diagonal_ode,
    neutral_scalar_dde,
    network_system,
    planar_delay_system,
    reassignment_instance,
)

SCALAR_A1 = -np.pi / 2


def network_instance(nodes=10, neighbours=4, rewire=0.5, seed=0):
    """Small-world coupling ``A = -L`` and in-degrees for the node network."""
    nx = pytest.importorskip("networkx")
    g = nx.watts_strogatz_graph(nodes, neighbours, rewire, seed=seed)
    lap = nx.laplacian_matrix(g).toarray().astype(float)
    return -lap, np.diag(lap).copy()


@pytest.fixture
def ode_sys():
    return diagonal_ode()


@pytest.fixture
def planar_sys():
    return planar_delay_system()


@pytest.fixture
def scalar_sys():
    return neutral_scalar_dde()


@pytest.fixture(scope="session")
def network():
    A, deg = network_instance()
    return A, deg, network_system(A)


@pytest.fixture(scope="session")
def reassignment():
    return reassignment_instance(8, seed=0)
