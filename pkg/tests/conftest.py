import numpy as np
import pytest

from mmfrac.elasticity import MaterialModel
from mmfrac.mesh import TriMesh, structured_mesh


@pytest.fixture
def unit_mesh():
    return structured_mesh(4)


@pytest.fixture
def two_triangles():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    el = np.array([[0, 1, 2], [0, 2, 3]])
    return TriMesh.from_arrays(v, el)


@pytest.fixture
def perturbed_mesh():
    mesh = structured_mesh(5)
    rng = np.random.default_rng(7)
    x = mesh.vertices.copy()
    inner = mesh.tags == 0
    x[inner] += 0.03 * rng.uniform(-1, 1, (inner.sum(), 2)) / 5
    return mesh.with_vertices(x)


def material(method="sonic_point", alpha=1e-3, **kw):
    if method == "none":
        alpha = 0.0
    return MaterialModel(regularization=method, alpha=alpha, **kw)


# one line per acceptance criterion, printed after the test session
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
