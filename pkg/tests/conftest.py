import numpy as np
import pytest

from morley_ocp.mesh import Mesh, bisect, initial_mesh

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_mesh(seed, max_elements=16, domain=(0.0, 1.0)):
    """Small mesh obtained by seeded random bisections of a criss-cross."""
    rng = np.random.default_rng(seed)
    mesh = initial_mesh(domain[0], domain[1], 1)
    while True:
        marked = rng.choice(mesh.n_elements,
                            size=rng.integers(1, 3), replace=False)
        nxt = bisect(mesh, marked)
        if nxt.n_elements > max_elements:
            return mesh
        mesh = nxt


@pytest.fixture
def unit_cross():
    return initial_mesh(0.0, 1.0, 1)


@pytest.fixture
def reference_triangle_mesh():
    return Mesh.from_arrays(
        np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
        np.array([[0, 1, 2]]))


@pytest.fixture
def split_square_mesh():
    # unit square cut by one diagonal
    return Mesh.from_arrays(
        np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
        np.array([[0, 1, 2], [0, 2, 3]]))
