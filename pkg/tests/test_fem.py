import numpy as np
import pytest
import sympy as sp_
from hypothesis import given, settings, strategies as st

from mmfrac import fem
from mmfrac.elasticity import MaterialModel
from mmfrac.fem import (BoundaryConditions, DirichletBC, ElasticOperator, LinearSolveError,
                        SparseSystem)
from mmfrac.mesh import MeshError, TriMesh, structured_mesh

from conftest import material

TENSION = BoundaryConditions((DirichletBC("bottom", "both"), DirichletBC("top", "x"),
                              DirichletBC("top", "y", 1.0)))


def sympy_local_stiffness(pts):
    # integrate grad phi_i . grad phi_j over the mapped reference triangle
    xi, eta = sp_.symbols("xi eta")
    phis = [1 - xi - eta, xi, eta]
    (x0, y0), (x1, y1), (x2, y2) = [[sp_.Rational(str(c)) for c in p] for p in pts]
    J = sp_.Matrix([[x1 - x0, x2 - x0], [y1 - y0, y2 - y0]])
    Jinv_t = J.inv().T
    grads = [Jinv_t * sp_.Matrix([sp_.diff(p, xi), sp_.diff(p, eta)]) for p in phis]
    K = sp_.zeros(3, 3)
    for i in range(3):
        for j in range(3):
            integrand = (grads[i].T * grads[j])[0] * J.det()
            K[i, j] = sp_.integrate(sp_.integrate(integrand, (eta, 0, 1 - xi)), (xi, 0, 1))
    return np.array(K.tolist(), dtype=float)


def test_stiffness_matches_symbolic_integration():
    pts = [(0.1, 0.2), (0.9, 0.15), (0.35, 0.8)]
    mesh = TriMesh.from_arrays(pts, [[0, 1, 2]])
    K = fem.stiffness_matrix(mesh).toarray()
    assert np.allclose(K, sympy_local_stiffness(pts), rtol=1e-12)


def test_lumped_areas_match_symbolic_mass_row_sums():
    xi, eta = sp_.symbols("xi eta")
    # on the reference triangle int phi_i = 1/6 = |K|/3
    val = sp_.integrate(sp_.integrate(xi, (eta, 0, 1 - xi)), (xi, 0, 1))
    mesh = TriMesh.from_arrays([(0, 0), (1, 0), (0, 1)], [[0, 1, 2]])
    assert np.allclose(mesh.lumped_areas, float(val))


def test_phase_field_constant_history_gives_constant_d(perturbed_mesh):
    m = MaterialModel(l=0.05)
    H = np.full(perturbed_mesh.n_vertices, 0.7)
    d = fem.solve_phase_field(perturbed_mesh, H, m)
    c = m.g_c / (2 * m.l)
    assert np.allclose(d, c / (2 * 0.7 + c), rtol=1e-10)


def test_phase_field_zero_history_is_intact(unit_mesh):
    d = fem.solve_phase_field(unit_mesh, np.zeros(unit_mesh.n_vertices), MaterialModel())
    assert np.allclose(d, 1.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-3, 1e4))
def test_phase_field_upper_bound_on_structured_mesh(seed, scale):
    mesh = structured_mesh(6)
    H = scale * np.random.default_rng(seed).random(mesh.n_vertices)
    d = fem.solve_phase_field(mesh, H, material())
    assert d.max() <= 1 + 1e-8


def test_phase_field_rejects_wrong_size(unit_mesh):
    with pytest.raises(MeshError):
        fem.assemble_phase_field(unit_mesh, np.zeros(3), MaterialModel())


def test_phase_field_matrix_is_spd(perturbed_mesh):
    rng = np.random.default_rng(0)
    sys_ = fem.assemble_phase_field(perturbed_mesh, rng.uniform(0, 5, perturbed_mesh.n_vertices),
                                    MaterialModel())
    A = sys_.matrix.toarray()
    assert np.allclose(A, A.T)
    assert np.linalg.eigvalsh(A).min() > 0


def test_solve_linear_with_constraints():
    A = np.array([[4.0, 1, 0], [1, 3, 1], [0, 1, 2]])
    x_true = np.array([1.0, -2.0, 0.5])
    import scipy.sparse as sp
    s = SparseSystem(sp.csr_matrix(A), A @ x_true, np.array([2]), np.array([0.5]))
    assert np.allclose(fem.solve_linear(s), x_true)


def test_solve_linear_singular_raises():
    import scipy.sparse as sp
    s = SparseSystem(sp.csr_matrix(np.zeros((2, 2))), np.ones(2))
    with pytest.raises(LinearSolveError):
        fem.solve_linear(s)


def test_patch_test_affine_displacement(perturbed_mesh):
    # homogeneous strain: interior residual vanishes, edge force equals stress x width
    mesh = perturbed_mesh
    m = material("none")
    U = 1e-3
    x = mesh.vertices
    u = np.column_stack([np.zeros(len(x)), U * x[:, 1]]).ravel()
    op = ElasticOperator(mesh, np.ones(mesh.n_vertices), m, TENSION, U)
    assert np.allclose(op.apply_dirichlet(u), u)
    r = op.residual(u).reshape(-1, 2)
    # free left/right sides carry the lateral reaction lam * U of uniaxial strain
    assert np.max(np.abs(r[mesh.tags == 0])) < 1e-12
    fx, fy = fem.load_vector(mesh, u, np.ones(mesh.n_vertices), m)
    assert fy == pytest.approx((m.lam + 2 * m.mu) * U, rel=1e-12)
    assert abs(fx) < 1e-14


@pytest.mark.parametrize("method", ["sonic_point", "exp_convolution", "smoothed_2point", "none"])
def test_residual_is_energy_gradient(two_triangles, method):
    m = material(method, k_l=1e-3)
    rng = np.random.default_rng(1)
    d = rng.uniform(0, 1, 4)
    bc = BoundaryConditions()
    op = ElasticOperator(two_triangles, d, m, bc)
    u = rng.uniform(-2e-3, 2e-3, 8)
    r = op.residual(u)
    g = np.empty(8)
    for j in range(8):
        h = 1e-8
        e = np.zeros(8)
        e[j] = h
        g[j] = (op.energy(u + e) - op.energy(u - e)) / (2 * h)
    assert np.linalg.norm(g - r) <= 1e-5 * np.linalg.norm(r)


def test_traction_and_body_force_are_external_work(unit_mesh):
    bc = BoundaryConditions(traction=(("right", (0.5, 0.0)),), body_force=(0.0, -2.0))
    op = ElasticOperator(unit_mesh, np.ones(unit_mesh.n_vertices), MaterialModel(), bc)
    f = op.external
    assert f[0::2].sum() == pytest.approx(0.5)  # traction x side length 1
    assert f[1::2].sum() == pytest.approx(-2.0)  # body force x area 1


def test_constrained_rows_of_residual_are_zero(unit_mesh):
    op = ElasticOperator(unit_mesh, np.ones(unit_mesh.n_vertices), MaterialModel(), TENSION, 1e-3)
    r = op.residual(np.random.default_rng(0).normal(size=op.n))
    assert np.all(r[op.constrained] == 0)
    top = unit_mesh.side_vertices("top")
    u = op.apply_dirichlet(np.zeros(op.n))
    assert np.allclose(u[2 * top + 1], 1e-3) and np.allclose(u[2 * top], 0)


def test_dirichlet_later_entries_override():
    mesh = structured_mesh(2)
    bc = BoundaryConditions((DirichletBC("top", "both", 0.0), DirichletBC("top", "y", 2.0)))
    dofs, vals = bc.dirichlet_values(mesh, 0.5)
    got = dict(zip(dofs.tolist(), vals.tolist()))
    top = mesh.side_vertices("top")
    assert all(got[2 * v + 1] == 1.0 and got[2 * v] == 0.0 for v in top)


def test_nodal_average_of_constant(perturbed_mesh):
    avg = fem.nodal_average(perturbed_mesh, np.full(perturbed_mesh.n_elements, 3.0))
    assert np.allclose(avg, 3.0)


def test_l2_norm_matches_exact_integral():
    # ||x||_L2^2 over the unit square = 1/3, exact for P1 with consistent mass
    mesh = structured_mesh(3)
    assert fem.l2_norm(mesh, mesh.vertices[:, 0]) == pytest.approx(np.sqrt(1 / 3), rel=1e-12)
    u = np.column_stack([np.ones(mesh.n_vertices), np.zeros(mesh.n_vertices)]).ravel()
    assert fem.l2_norm(mesh, u) == pytest.approx(1.0)


def test_degenerate_mesh_rejected():
    mesh = TriMesh.from_arrays([[0, 0], [1, 0], [0, 1]], [[0, 2, 1]])
    with pytest.raises(MeshError):
        ElasticOperator(mesh, np.ones(3), MaterialModel(), BoundaryConditions())
