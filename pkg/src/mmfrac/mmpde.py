"""Metric-based moving mesh (MMPDE) driven by the recovered Hessian of d.

The computational mesh xi is relaxed by a gradient flow of Huang's
equidistribution/alignment functional with the physical mesh held fixed;
the new physical mesh is then the image of the reference mesh under the
piecewise-linear map xi -> x.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .elasticity import eig_sym2
from .mesh import BOTTOM, CORNER, LEFT, RIGHT, TOP, MeshError, TriMesh, \
    locate_points, vertex_hint

log = logging.getLogger(__name__)

MAX_HALVINGS = 20
HESSIAN_COND_LIMIT = 1e8


class MeshInversionError(RuntimeError):
    pass


@dataclass(frozen=True)
class MeshEnergyParams:
    theta: float = 1.0 / 3.0
    p: float = 1.5
    tau: float = 1e-2
    smoothing_sweeps: int = 2
    move_time: float = 1.0  # integration horizon in units of tau

    def __post_init__(self):
        if not 0 < self.theta <= 0.5:
            raise ValueError("theta must lie in (0, 1/2]")
        if not self.p > 1:
            raise ValueError("p must exceed 1")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.smoothing_sweeps < 0:
            raise ValueError("smoothing_sweeps must be non-negative")
        if not self.move_time > 0:
            raise ValueError("move_time must be positive")


@dataclass
class MetricField:
    vertex: np.ndarray  # (Nv, 3) symmetric tensors
    element: np.ndarray  # (N, 3)

    @property
    def vertex_det(self) -> np.ndarray:
        return _det(self.vertex)

    @property
    def element_det(self) -> np.ndarray:
        return _det(self.element)


def _det(t):
    return t[..., 0] * t[..., 1] - t[..., 2] ** 2


# --- Hessian recovery ----------------------------------------------------------

def _padded(lists):
    width = max(len(x) for x in lists)
    idx = np.zeros((len(lists), width), dtype=np.int64)
    mask = np.zeros((len(lists), width), dtype=bool)
    for i, x in enumerate(lists):
        idx[i, :len(x)] = x
        mask[i, :len(x)] = True
    return idx, mask


def _rings(mesh: TriMesh):
    topo = mesh.topology
    cached = getattr(topo, "_hessian_rings", None)
    if cached is None:
        a = topo.adjacency
        a2 = (a @ a).tocsr()
        ring1 = [a.indices[a.indptr[j]:a.indptr[j + 1]] for j in range(topo.n_vertices)]
        ring2 = [a2.indices[a2.indptr[j]:a2.indptr[j + 1]] for j in range(topo.n_vertices)]
        cached = (_padded(ring1), _padded(ring2))
        topo._hessian_rings = cached
    return cached


def _fit(mesh, values, verts, idx, mask):
    x = mesh.vertices
    rel = x[idx] - x[verts][:, None, :]
    scale = np.sqrt((rel ** 2).sum(axis=2).max(axis=1))
    X = rel[..., 0] / scale[:, None]
    Y = rel[..., 1] / scale[:, None]
    A = np.stack([np.ones_like(X), X, Y, X * X, X * Y, Y * Y], axis=2)
    A = A * mask[..., None]
    rhs = values[idx] * mask
    N = np.einsum("vpi,vpj->vij", A, A)
    b = np.einsum("vpi,vp->vi", A, rhs)
    s = np.linalg.svd(N, compute_uv=False)
    with np.errstate(divide="ignore"):
        cond = np.sqrt(s[:, 0] / s[:, -1])
    ok = (mask.sum(axis=1) >= 6) & np.isfinite(cond) & (cond <= HESSIAN_COND_LIMIT)
    c = np.zeros((len(verts), 6))
    if np.any(ok):
        c[ok] = np.linalg.solve(N[ok], b[ok][..., None])[..., 0]
    h2 = scale ** 2
    hess = np.column_stack([2 * c[:, 3] / h2, 2 * c[:, 5] / h2, c[:, 4] / h2])
    return hess, ok


def recover_hessian(mesh: TriMesh, d) -> np.ndarray:
    """Per-vertex Hessian from a least-squares quadratic fit on the vertex patch.

    Uses the first ring of neighbours, falling back to the second ring where
    that gives fewer than six points or an ill-conditioned fit.
    """
    d = np.asarray(d, dtype=float)
    if d.shape != (mesh.n_vertices,):
        raise MeshError("d must be nodal")
    (i1, m1), (i2, m2) = _rings(mesh)
    verts = np.arange(mesh.n_vertices)
    hess, ok = _fit(mesh, d, verts, i1, m1)
    bad = ~ok
    if np.any(bad):
        h2, ok2 = _fit(mesh, d, verts[bad], i2[bad], m2[bad])
        if not np.all(ok2):
            raise MeshError("rank-deficient Hessian fit")
        hess[bad] = h2
    return hess


def metric_from_hessian(hessians, mesh: TriMesh | None = None,
                        smoothing_sweeps: int = 0) -> MetricField:
    """M = det(I + |H|)^(-1/6) (I + |H|), optionally patch-smoothed."""
    vals, q = eig_sym2(hessians)
    a = 1.0 + np.abs(vals)
    scale = (a[:, 0] * a[:, 1]) ** (-1.0 / 6.0)
    f1, f2 = scale * a[:, 0], scale * a[:, 1]
    c, s = q[:, 0, 0], q[:, 1, 0]
    m = np.column_stack([f1 * c * c + f2 * s * s, f1 * s * s + f2 * c * c, (f1 - f2) * c * s])
    if mesh is None:
        return MetricField(m, np.zeros((0, 3)))
    if smoothing_sweeps:
        adj = mesh.topology.adjacency
        avg = sp.diags(1.0 / np.asarray(adj.sum(axis=1)).ravel()) @ adj
        for _ in range(smoothing_sweeps):
            m = avg @ m
    return MetricField(m, m[mesh.elements].mean(axis=1))


def compute_metric(mesh: TriMesh, d, params: MeshEnergyParams) -> MetricField:
    return metric_from_hessian(recover_hessian(mesh, d), mesh, params.smoothing_sweeps)


# --- energy functional and velocities -------------------------------------------

def _inv2(a):
    det = a[:, 0, 0] * a[:, 1, 1] - a[:, 0, 1] * a[:, 1, 0]
    inv = np.empty_like(a)
    inv[:, 0, 0] = a[:, 1, 1] / det
    inv[:, 1, 1] = a[:, 0, 0] / det
    inv[:, 0, 1] = -a[:, 0, 1] / det
    inv[:, 1, 0] = -a[:, 1, 0] / det
    return inv, det


def _metric_inverse(mk):
    det = _det(mk)
    inv = np.empty((len(mk), 2, 2))
    inv[:, 0, 0] = mk[:, 1] / det
    inv[:, 1, 1] = mk[:, 0] / det
    inv[:, 0, 1] = inv[:, 1, 0] = -mk[:, 2] / det
    return inv, det


def _energy_terms(physical: TriMesh, comp_vertices, metric: MetricField, params):
    E = physical.edge_matrices
    xi = comp_vertices[physical.elements]
    Ehat = np.stack([xi[:, 1] - xi[:, 0], xi[:, 2] - xi[:, 0]], axis=2)
    Einv, detE = _inv2(E)
    J = Ehat @ Einv
    Minv, detM = _metric_inverse(metric.element)
    detJ = (Ehat[:, 0, 0] * Ehat[:, 1, 1] - Ehat[:, 0, 1] * Ehat[:, 1, 0]) / detE
    tr = np.einsum("kij,kjl,kil->k", J, Minv, J)
    return E, Ehat, Einv, detE, J, Minv, detM, detJ, tr


def mesh_energy(physical: TriMesh, computational: TriMesh | np.ndarray,
                metric: MetricField, params: MeshEnergyParams) -> float:
    """I_h = sum_K |K| G(J_K, det J_K, M_K) with J_K = Ehat_K E_K^{-1}."""
    xi = computational.vertices if isinstance(computational, TriMesh) else computational
    *_, detM, detJ, tr = _energy_terms(physical, xi, metric, params)
    if np.any(detJ <= 0) or np.any(physical.signed_areas <= 0):
        raise MeshError("degenerate element")
    th, p = params.theta, params.p
    sq = np.sqrt(detM)
    G = th * sq * tr ** p + (1 - 2 * th) * 2 ** p * sq * (detJ / sq) ** p
    return float(np.dot(physical.signed_areas, G))


def energy_gradient(physical: TriMesh, comp_vertices: np.ndarray,
                    metric: MetricField, params: MeshEnergyParams) -> np.ndarray:
    """(Nv, 2) sum over the patch of |K| v^K_{j_K}, i.e. -dI_h/dxi_j."""
    E, Ehat, Einv, detE, J, Minv, detM, detJ, tr = _energy_terms(
        physical, comp_vertices, metric, params)
    th, p = params.theta, params.p
    sq = np.sqrt(detM)
    dG_dJ = (2 * p * th * sq * tr ** (p - 1))[:, None, None] * (Minv @ J.transpose(0, 2, 1))
    dG_ddet = p * (1 - 2 * th) * 2 ** p * detM ** ((1 - p) / 2) * detJ ** (p - 1)
    Ehat_inv, detEhat = _inv2(Ehat)
    v12 = -Einv @ dG_dJ - (dG_ddet * detEhat / detE)[:, None, None] * Ehat_inv
    v = np.empty((len(E), 3, 2))
    v[:, 1:] = v12
    v[:, 0] = -v12.sum(axis=1)
    w = physical.signed_areas[:, None, None] * v
    el = physical.elements.ravel()
    n = physical.n_vertices
    gx = np.bincount(el, weights=w[..., 0].ravel(), minlength=n)
    gy = np.bincount(el, weights=w[..., 1].ravel(), minlength=n)
    return np.column_stack([gx, gy])


def constrain_boundary(mesh: TriMesh, vel: np.ndarray) -> np.ndarray:
    """Zero normal components on straight sides and whole velocity at corners."""
    vel = vel.copy()
    tags = mesh.tags
    vel[(tags == LEFT) | (tags == RIGHT), 0] = 0.0
    vel[(tags == BOTTOM) | (tags == TOP), 1] = 0.0
    vel[tags == CORNER] = 0.0
    return vel


def nodal_velocities(physical: TriMesh, computational: TriMesh | np.ndarray,
                     metric: MetricField, params: MeshEnergyParams,
                     constrained: bool = True) -> np.ndarray:
    """Mesh velocities d xi_j / dt = (P_j / tau) sum_K |K| v^K_{j_K}."""
    xi = computational.vertices if isinstance(computational, TriMesh) else computational
    P = metric.vertex_det ** ((params.p - 1) / 2)
    vel = (P / params.tau)[:, None] * energy_gradient(physical, xi, metric, params)
    return constrain_boundary(physical, vel) if constrained else vel


# --- integration and new mesh ------------------------------------------------------

@dataclass
class MoveReport:
    steps: int = 0
    rejected: int = 0
    energy_history: list[float] | None = None
    stopped_early: bool = False


def _areas(mesh: TriMesh, xi: np.ndarray) -> np.ndarray:
    p = xi[mesh.elements]
    e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def integrate_mmpde(physical: TriMesh, reference: TriMesh, metric: MetricField,
                    params: MeshEnergyParams, record: bool = False):
    """Explicit Euler on the computational coordinates from the reference mesh.

    Steps are halved on element inversion or energy increase and grown by
    1.2 after each accepted step.
    """
    t_end = params.tau * params.move_time
    xi = reference.vertices.copy()
    energy = mesh_energy(physical, xi, metric, params)
    report = MoveReport(energy_history=[energy] if record else None)
    t = 0.0
    dt = t_end / 8.0
    while t < t_end * (1 - 1e-12):
        vel = nodal_velocities(physical, xi, metric, params)
        dt = min(dt, t_end - t)
        halvings = 0
        while True:
            trial = xi + dt * vel
            if np.all(_areas(physical, trial) > 0):
                e_new = mesh_energy(physical, trial, metric, params)
                if e_new <= energy:
                    break
                kind = "energy"
            else:
                kind = "inversion"
            report.rejected += 1
            halvings += 1
            dt *= 0.5
            if halvings > MAX_HALVINGS:
                if kind == "inversion":
                    raise MeshInversionError("element inversion persists after 20 step halvings")
                # no descent left at roundoff level: stationary
                report.stopped_early = True
                return xi, report
        xi, energy = trial, e_new
        t += dt
        report.steps += 1
        if record:
            report.energy_history.append(energy)
        dt *= 1.2
    return xi, report


def _snap_boundary(reference: TriMesh, x: np.ndarray, physical: TriMesh) -> np.ndarray:
    # keep boundary vertices exactly on their sides (roundoff from interpolation)
    tags = reference.tags
    lo, hi = physical.vertices.min(axis=0), physical.vertices.max(axis=0)
    ref = reference.vertices
    x = x.copy()
    x[tags == LEFT, 0] = lo[0]
    x[tags == RIGHT, 0] = hi[0]
    x[tags == BOTTOM, 1] = lo[1]
    x[tags == TOP, 1] = hi[1]
    x[tags == CORNER] = ref[tags == CORNER]
    return x


def move_mesh(physical: TriMesh, d, reference: TriMesh, params: MeshEnergyParams,
              metric: MetricField | None = None, record: bool = False):
    """One MMPDE mesh update; returns ``(new_physical_mesh, MoveReport)``."""
    if metric is None:
        metric = compute_metric(physical, d, params)
    xi, report = integrate_mmpde(physical, reference, metric, params, record)
    comp = physical.with_vertices(xi)
    elem, bary, _ = locate_points(comp, reference.vertices, vertex_hint(comp))
    x_new = np.einsum("pi,pia->pa", bary, physical.vertices[physical.elements[elem]])
    x_new = _snap_boundary(reference, x_new, physical)
    # Phi_h is piecewise linear, so a rare fold is undone by backing off towards x^n
    frac = 1.0
    x_old = physical.vertices
    for _ in range(MAX_HALVINGS):
        cand = x_old + frac * (x_new - x_old)
        if np.all(_areas(physical, cand) > 0):
            if frac < 1.0:
                log.warning("mesh update damped to %.3g to keep elements valid", frac)
            return physical.with_vertices(cand), report
        frac *= 0.5
    raise MeshInversionError("new physical mesh is inverted")


def equidistribution_cv(mesh: TriMesh, metric: MetricField) -> float:
    """Coefficient of variation of |K| sqrt(det M_K) over elements."""
    rho = mesh.signed_areas * np.sqrt(metric.element_det)
    return float(rho.std() / rho.mean())


def quality_row(mesh: TriMesh, metric: MetricField, params: MeshEnergyParams,
                reference: TriMesh) -> dict:
    a = mesh.signed_areas
    return {
        "min_area": float(a.min()),
        "max_area": float(a.max()),
        "equidistribution_cv": equidistribution_cv(mesh, metric),
        "energy": mesh_energy(mesh, reference, metric, params),
    }


QUALITY_FIELDS = ["step", "min_area", "max_area", "equidistribution_cv", "energy"]

