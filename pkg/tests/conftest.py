import numpy as np
import pytest

from cavrad.fem import FEMSpace
from cavrad.generators import CAVITY_TAG, gen_fibonacci_bodies, gen_parallel_plates
from cavrad.mesh import VolumeMesh, extract_boundary

UNIT_TET_NODES = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
UNIT_HEX_NODES = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
                           [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]], dtype=float)


def unit_tet(tags=()):
    return VolumeMesh(UNIT_TET_NODES, tets=[[0, 1, 2, 3]], boundary_tags=[(0, f, t) for f, t in tags])


def unit_hex(tag=1):
    return VolumeMesh(UNIT_HEX_NODES, hexes=[list(range(8))], boundary_tags=[(0, f, tag) for f in range(6)])


class Case:
    """A generated mesh with its cavity surface and FE space."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.surf = extract_boundary(mesh, {CAVITY_TAG})
        self.space = FEMSpace(mesh)


@pytest.fixture(scope="session")
def plates4():
    return Case(gen_parallel_plates(m=4))


@pytest.fixture(scope="session")
def plates40():
    return Case(gen_parallel_plates(m=40))


@pytest.fixture(scope="session")
def fib1():
    return Case(gen_fibonacci_bodies(1))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def reflection_pair(surf, eps_rel, emissivity=0.8, n_min=100, F_dense=None):
    """Reflection matrix of an open cavity as an H-matrix and as a dense oracle."""
    from cavrad.cavity import build_reflection
    from cavrad.cluster import build_block_tree, build_index_tree
    from cavrad.hmatrix import assemble_hmatrix
    from cavrad.viewfactor import ViewFactorKernel, assemble_dense_F

    kernel = ViewFactorKernel(surf)
    F = assemble_dense_F(surf, kernel=kernel) if F_dense is None else F_dense
    btree = build_block_tree(build_index_tree(surf.centroids, n_min), 2.0)
    H = assemble_hmatrix(kernel, btree, eps_rel)
    eps = np.full(surf.n_facets, emissivity)
    return build_reflection(H, eps, surf.areas), build_reflection(F, eps, surf.areas)


@pytest.fixture(scope="session")
def plates40_F(plates40):
    from cavrad.viewfactor import assemble_dense_F
    return assemble_dense_F(plates40.surf)


# one summary line per acceptance criterion, appended by test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
