"""P1 finite elements for the phase-field and displacement equations.

Displacement dofs are interleaved: vertex j owns dofs ``2j`` (x) and ``2j+1`` (y).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .elasticity import MaterialModel, energy_density, stress
from .mesh import MeshError, TriMesh

log = logging.getLogger(__name__)

DIRECT_SOLVE_LIMIT = 200_000


class LinearSolveError(RuntimeError):
    def __init__(self, message, residual=np.nan):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


@dataclass
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    constrained: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass(frozen=True)
class DirichletBC:
    """Prescribe ``scale * U`` on a component of every vertex of a side."""

    side: str
    component: str  # "x", "y" or "both"
    scale: float = 0.0

    def dofs(self, mesh: TriMesh) -> np.ndarray:
        v = mesh.side_vertices(self.side)
        comps = {"x": (0,), "y": (1,), "both": (0, 1)}[self.component]
        return np.sort(np.concatenate([2 * v + c for c in comps]))


@dataclass(frozen=True)
class BoundaryConditions:
    dirichlet: tuple[DirichletBC, ...] = ()
    traction: tuple[tuple[str, tuple[float, float]], ...] = ()
    body_force: tuple[float, float] = (0.0, 0.0)

    def dirichlet_values(self, mesh: TriMesh, load: float):
        """Constrained dofs and their values; later entries override earlier ones."""
        vals: dict[int, float] = {}
        for bc in self.dirichlet:
            for dof in bc.dofs(mesh):
                vals[int(dof)] = bc.scale * load
        dofs = np.array(sorted(vals), dtype=np.int64)
        return dofs, np.array([vals[k] for k in dofs], dtype=float)


def _scatter_matrix(mesh: TriMesh, local: np.ndarray, n: int, dof_map: np.ndarray):
    rows = np.repeat(dof_map, dof_map.shape[1], axis=1).ravel()
    cols = np.tile(dof_map, (1, dof_map.shape[1])).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def stiffness_matrix(mesh: TriMesh, coeff=1.0) -> sp.csr_matrix:
    """Scalar P1 stiffness  int coeff grad phi_i . grad phi_j  (centroid rule)."""
    g = mesh.shape_gradients
    area = mesh.signed_areas
    local = np.einsum("k,kid,kjd->kij", area * coeff, g, g)
    return _scatter_matrix(mesh, local, mesh.n_vertices, mesh.elements)


def assemble_phase_field(mesh: TriMesh, H, material: MaterialModel) -> SparseSystem:
    """Linear system for d from the discrete phase-field equation.

    Gradient term by the centroid rule, reaction and source terms by the
    vertex rule (diagonal). Homogeneous Neumann boundary, no constraints.
    """
    H = np.asarray(H, dtype=float)
    if H.shape != (mesh.n_vertices,):
        raise MeshError("H must be nodal on the mesh")
    if np.any(mesh.signed_areas <= 0):
        raise MeshError("degenerate element")
    gc, l = material.g_c, material.l
    lumped = mesh.lumped_areas
    K = stiffness_matrix(mesh, 2.0 * gc * l)
    A = K + sp.diags(lumped * (2.0 * H + gc / (2.0 * l)))
    return SparseSystem(A.tocsr(), lumped * gc / (2.0 * l))


def solve_linear(system: SparseSystem, rtol: float = 1e-10) -> np.ndarray:
    """Solve with constrained dofs eliminated symmetrically."""
    A = system.matrix.tocsr()
    b = np.asarray(system.rhs, dtype=float).copy()
    n = A.shape[0]
    x = np.zeros(n)
    c = np.asarray(system.constrained, dtype=np.int64)
    x[c] = system.values
    free = np.ones(n, dtype=bool)
    free[c] = False
    if c.size:
        b -= A @ x
    Aff = A[free][:, free].tocsc()
    bf = b[free]
    bnorm = np.linalg.norm(bf)
    if bnorm == 0.0:
        return x
    xf = None
    if Aff.shape[0] <= DIRECT_SOLVE_LIMIT:
        try:
            xf = spla.splu(Aff).solve(bf)
        except RuntimeError as exc:
            log.warning("direct factorization failed: %s", exc)
    if xf is None or not np.all(np.isfinite(xf)):
        diag = Aff.diagonal()
        if np.any(diag == 0):
            raise LinearSolveError("singular matrix")
        pre = sp.diags(1.0 / diag)
        xf, info = spla.cg(Aff, bf, rtol=rtol * 0.1, maxiter=10 * len(bf), M=pre)
    res = np.linalg.norm(Aff @ xf - bf) / bnorm
    if not res <= rtol:
        raise LinearSolveError("linear solve did not reach tolerance", res)
    x[free] = xf
    return x


def solve_phase_field(mesh: TriMesh, H, material: MaterialModel) -> np.ndarray:
    return solve_linear(assemble_phase_field(mesh, H, material))


# --- displacement -----------------------------------------------------------

def element_strains(mesh: TriMesh, u) -> np.ndarray:
    """(N, 3) constant strain (xx, yy, xy) per element from nodal u (2 Nv,)."""
    ue = np.asarray(u, dtype=float).reshape(-1, 2)[mesh.elements]  # (N,3,2)
    grad = np.einsum("kia,kib->kab", ue, mesh.shape_gradients)  # du_a/dx_b
    return np.column_stack([grad[:, 0, 0], grad[:, 1, 1],
                            0.5 * (grad[:, 0, 1] + grad[:, 1, 0])])


def element_values(mesh: TriMesh, nodal) -> np.ndarray:
    """P1 field evaluated at element centroids."""
    return np.asarray(nodal, dtype=float)[mesh.elements].mean(axis=1)


class ElasticOperator:
    """Displacement residual with mesh, phase field and loads held fixed."""

    def __init__(self, mesh: TriMesh, d, material: MaterialModel,
                 bc: BoundaryConditions, load: float = 0.0):
        if np.any(mesh.signed_areas <= 0):
            raise MeshError("degenerate element")
        self.mesh = mesh
        self.material = material
        self.bc = bc
        self.load = load
        self.d_el = element_values(mesh, d)
        self.n = 2 * mesh.n_vertices
        el = mesh.elements
        self.dof_map = np.stack([2 * el, 2 * el + 1], axis=2).reshape(-1, 6)
        self.constrained, self.values = bc.dirichlet_values(mesh, load)
        self.free = np.ones(self.n, dtype=bool)
        self.free[self.constrained] = False
        self.external = self._external_forces()

    def _external_forces(self) -> np.ndarray:
        mesh = self.mesh
        f = np.zeros(self.n)
        fx, fy = self.bc.body_force
        if fx or fy:
            a = mesh.lumped_areas
            f[0::2] += fx * a
            f[1::2] += fy * a
        for side, (tx, ty) in self.bc.traction:
            edges = mesh.side_edges(side)
            el = mesh.elements
            a = el[edges[:, 0], edges[:, 1]]
            b = el[edges[:, 0], edges[:, 2]]
            length = np.linalg.norm(mesh.vertices[b] - mesh.vertices[a], axis=1)
            for v in (a, b):
                np.add.at(f, 2 * v, 0.5 * tx * length)
                np.add.at(f, 2 * v + 1, 0.5 * ty * length)
        return f

    def apply_dirichlet(self, u) -> np.ndarray:
        u = np.array(u, dtype=float)
        u[self.constrained] = self.values
        return u

    def internal_forces(self, u) -> np.ndarray:
        mesh = self.mesh
        sig = stress(element_strains(mesh, u), self.d_el, self.material)
        g = mesh.shape_gradients
        a = mesh.signed_areas
        # f_{i,x} = |K| (s_xx g_x + s_xy g_y),  f_{i,y} = |K| (s_xy g_x + s_yy g_y)
        fx = a[:, None] * (sig[:, None, 0] * g[:, :, 0] + sig[:, None, 2] * g[:, :, 1])
        fy = a[:, None] * (sig[:, None, 2] * g[:, :, 0] + sig[:, None, 1] * g[:, :, 1])
        local = np.stack([fx, fy], axis=2).reshape(-1)
        return np.bincount(self.dof_map.ravel(), weights=local, minlength=self.n)

    def residual(self, u) -> np.ndarray:
        r = self.internal_forces(u) - self.external
        r[self.constrained] = 0.0
        return r

    def energy(self, u) -> float:
        """Stored elastic energy minus the work of the external loads."""
        mesh = self.mesh
        w = energy_density(element_strains(mesh, u), self.d_el, self.material)
        return float(np.dot(mesh.signed_areas, w) - np.dot(self.external, u))


def displacement_residual(mesh, u, d, material, bc, load=0.0) -> np.ndarray:
    return ElasticOperator(mesh, d, material, bc, load).residual(u)


def elastic_energy(mesh, u, d, material) -> float:
    w = energy_density(element_strains(mesh, u), element_values(mesh, d), material)
    return float(np.dot(mesh.signed_areas, w))


def element_stresses(mesh, u, d, material) -> np.ndarray:
    return stress(element_strains(mesh, u), element_values(mesh, d), material)


def load_vector(mesh: TriMesh, u, d, material: MaterialModel, side: str = "top"):
    """(F_x, F_y): integral of sigma . n over a boundary side, elementwise sigma."""
    edges = mesh.side_edges(side)
    if len(edges) == 0:
        raise MeshError(f"no boundary edges on side {side!r}")
    el = mesh.elements
    a = mesh.vertices[el[edges[:, 0], edges[:, 1]]]
    b = mesh.vertices[el[edges[:, 0], edges[:, 2]]]
    t = b - a
    normal = np.column_stack([t[:, 1], -t[:, 0]])  # outward for CCW elements, |n| = length
    sig = element_stresses(mesh, u, d, material)[edges[:, 0]]
    fx = sig[:, 0] * normal[:, 0] + sig[:, 2] * normal[:, 1]
    fy = sig[:, 2] * normal[:, 0] + sig[:, 1] * normal[:, 1]
    return float(fx.sum()), float(fy.sum())


def nodal_average(mesh: TriMesh, element_field) -> np.ndarray:
    """Area-weighted average of an element field over each vertex patch."""
    w = np.repeat(np.abs(mesh.signed_areas) * np.asarray(element_field, float), 3)
    num = np.bincount(mesh.elements.ravel(), weights=w, minlength=mesh.n_vertices)
    return num / (3.0 * mesh.lumped_areas)


def l2_norm(mesh: TriMesh, nodal) -> float:
    """L2 norm of a P1 field (consistent mass); scalar or interleaved vector fields."""
    v = np.asarray(nodal, dtype=float).reshape(mesh.n_vertices, -1)[mesh.elements]  # (N,3,c)
    # element mass |K|/12 (1 + delta_ij): |K|/12 (sum_i v_i^2 + (sum_i v_i)^2)
    s = (v * v).sum(axis=(1, 2)) + (v.sum(axis=1) ** 2).sum(axis=1)
    return float(np.sqrt(np.dot(mesh.signed_areas, s) / 12.0))
