import numpy as np
import pytest

from formanflow.calculus import Operators
from formanflow.complex_core import build_complex
from formanflow.forman import build_forman
from formanflow.io_formats import structured_grid
from formanflow.voronoi import random_voronoi

import oracle


@pytest.fixture(scope="session")
def hexa():
    return build_complex(*oracle.hexahedron())


@pytest.fixture(scope="session")
def tetra():
    return build_complex(*oracle.tetrahedron())


@pytest.fixture(scope="session")
def grid2():
    """Two unit hexahedra side by side along x."""
    return structured_grid(2, 1, 1, 2.0, 1.0, 1.0)


@pytest.fixture(scope="session")
def grid222():
    return structured_grid(2, 2, 2)


@pytest.fixture(scope="session")
def voro40():
    return random_voronoi(40, seed=11)


@pytest.fixture(scope="session")
def ops_of():
    """Cached ``(K, Operators)`` per complex."""
    cache = {}

    def get(M):
        if id(M) not in cache:
            K = build_forman(M)
            cache[id(M)] = (M, K, Operators.build(K))
        return cache[id(M)][1:]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
