import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import settings

from stmg.fem import SpatialOperators
from stmg.mesh import TetMesh, build_base_mesh, build_hierarchy
from stmg.spacetime import build_level

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")

REF_TET = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])


@pytest.fixture(scope="session")
def ref_tet():
    return TetMesh.from_arrays(REF_TET, [[0, 1, 2, 3]])


@pytest.fixture(scope="session")
def two_tets_h3():
    return build_hierarchy(build_base_mesh("two_tets"), 3)


@pytest.fixture(scope="session")
def cube_h2():
    return build_hierarchy(build_base_mesh("unit_cube"), 2)


def scalar_level(m, tau=1.0, M=1.0, K=0.0):
    """Level with 1x1 spatial operators and an empty nodal space."""
    ops = SpatialOperators(
        mesh=None, M=sp.csr_matrix([[M]]), K=sp.csr_matrix([[K]]),
        Kn=sp.csr_matrix((0, 0)), G=sp.csr_matrix((1, 0)), bc="dirichlet",
        free_edges=np.arange(1), free_nodes=np.arange(0),
    )
    return build_level(ops, tau, m)


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
