"""Triangular meshes with fixed connectivity.

The physical, computational and reference meshes of one simulation share
the same connectivity and differ only in vertex coordinates, so all
topological data lives in a :class:`Topology` object that is shared between
:class:`TriMesh` instances created with :meth:`TriMesh.with_vertices`.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

# boundary tags
INTERIOR = 0
BOTTOM, RIGHT, TOP, LEFT = 1, 2, 3, 4
CORNER = 5
SIDES = {"bottom": BOTTOM, "right": RIGHT, "top": TOP, "left": LEFT}

TOL_BC = 1e-10
CLAMP_DIST = 1e-8


class MeshError(ValueError):
    pass


class Topology:
    """Connectivity shared by every mesh of one simulation."""

    def __init__(self, elements: np.ndarray, n_vertices: int, tags: np.ndarray):
        self.elements = np.ascontiguousarray(elements, dtype=np.int64)
        self.n_vertices = int(n_vertices)
        self.tags = np.asarray(tags, dtype=np.int64)
        if self.tags.shape != (self.n_vertices,):
            raise MeshError("one boundary tag per vertex required")

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @cached_property
    def incidence(self) -> sp.csr_matrix:
        """Vertex-by-element incidence matrix (1 where vertex j is in K)."""
        n = self.n_elements
        rows = self.elements.ravel()
        cols = np.repeat(np.arange(n), 3)
        return sp.csr_matrix(
            (np.ones(3 * n), (rows, cols)), shape=(self.n_vertices, n)
        )

    @cached_property
    def patch_map(self) -> list[np.ndarray]:
        """Element patch omega_j of every vertex."""
        inc = self.incidence
        return [inc.indices[inc.indptr[j]:inc.indptr[j + 1]]
                for j in range(self.n_vertices)]

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Vertex adjacency through shared elements, diagonal included."""
        inc = self.incidence
        a = (inc @ inc.T).tocsr()
        a.data[:] = 1.0
        return a

    @cached_property
    def neighbors(self) -> list[np.ndarray]:
        a = self.adjacency
        out = []
        for j in range(self.n_vertices):
            nb = a.indices[a.indptr[j]:a.indptr[j + 1]]
            out.append(nb[nb != j])
        return out

    @cached_property
    def element_neighbors(self) -> np.ndarray:
        """(N, 3) element across the edge opposite local vertex i, or -1."""
        el = self.elements
        n = len(el)
        out = -np.ones((n, 3), dtype=np.int64)
        table: dict[tuple[int, int], tuple[int, int]] = {}
        for k in range(n):
            for i in range(3):
                a, b = el[k, (i + 1) % 3], el[k, (i + 2) % 3]
                key = (a, b) if a < b else (b, a)
                other = table.pop(key, None)
                if other is None:
                    table[key] = (k, i)
                else:
                    out[k, i] = other[0]
                    out[other[0], other[1]] = k
        return out

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        """(nb, 3) rows of (element, local vertex a, local vertex b), CCW order."""
        k, i = np.nonzero(self.element_neighbors < 0)
        return np.column_stack([k, (i + 1) % 3, (i + 2) % 3])


class TriMesh:
    """Simplicial 2D mesh: vertex coordinates plus a shared :class:`Topology`."""

    def __init__(self, vertices: np.ndarray, topology: Topology):
        vertices = np.array(vertices, dtype=float)
        if vertices.shape != (topology.n_vertices, 2):
            raise MeshError("vertex array does not match topology")
        vertices.setflags(write=False)
        self.vertices = vertices
        self.topology = topology

    @classmethod
    def from_arrays(cls, vertices, elements, tags=None) -> "TriMesh":
        vertices = np.asarray(vertices, dtype=float)
        if tags is None:
            tags = np.zeros(len(vertices), dtype=np.int64)
        return cls(vertices, Topology(np.asarray(elements), len(vertices), tags))

    def with_vertices(self, vertices: np.ndarray) -> "TriMesh":
        return TriMesh(vertices, self.topology)

    @property
    def elements(self) -> np.ndarray:
        return self.topology.elements

    @property
    def tags(self) -> np.ndarray:
        return self.topology.tags

    @property
    def n_vertices(self) -> int:
        return self.topology.n_vertices

    @property
    def n_elements(self) -> int:
        return self.topology.n_elements

    @property
    def patch_map(self) -> list[np.ndarray]:
        return self.topology.patch_map

    @cached_property
    def edge_matrices(self) -> np.ndarray:
        """(N, 2, 2) edge matrices with columns x1 - x0 and x2 - x0."""
        x = self.vertices[self.elements]
        return np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]], axis=2)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        e = self.edge_matrices
        return 0.5 * (e[:, 0, 0] * e[:, 1, 1] - e[:, 0, 1] * e[:, 1, 0])

    @cached_property
    def inverse_edge_matrices(self) -> np.ndarray:
        e = self.edge_matrices
        det = 2.0 * self.signed_areas
        if np.any(det == 0.0):
            raise MeshError("degenerate element")
        inv = np.empty_like(e)
        inv[:, 0, 0] = e[:, 1, 1] / det
        inv[:, 1, 1] = e[:, 0, 0] / det
        inv[:, 0, 1] = -e[:, 0, 1] / det
        inv[:, 1, 0] = -e[:, 1, 0] / det
        return inv

    @cached_property
    def shape_gradients(self) -> np.ndarray:
        """(N, 3, 2) gradients of the three P1 basis functions per element."""
        inv = self.inverse_edge_matrices
        g = np.empty((self.n_elements, 3, 2))
        g[:, 1] = inv[:, 0, :]
        g[:, 2] = inv[:, 1, :]
        g[:, 0] = -g[:, 1] - g[:, 2]
        return g

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.elements].mean(axis=1)

    @cached_property
    def lumped_areas(self) -> np.ndarray:
        """Integral of each P1 basis function, |K|/3 summed over the patch."""
        a = np.repeat(np.abs(self.signed_areas) / 3.0, 3)
        return np.bincount(self.elements.ravel(), weights=a,
                           minlength=self.n_vertices)

    @cached_property
    def diameters(self) -> np.ndarray:
        x = self.vertices[self.elements]
        edges = x[:, [1, 2, 0]] - x
        return np.sqrt((edges ** 2).sum(axis=2)).max(axis=1)

    @cached_property
    def _tree(self) -> cKDTree:
        return cKDTree(self.centroids)

    def is_valid(self) -> bool:
        return bool(np.all(self.signed_areas > 0.0))

    def side_vertices(self, side: str) -> np.ndarray:
        """Vertices on a named side of a rectangular domain, corners included."""
        tag = SIDES[side]
        v = self.vertices
        lo, hi = v.min(axis=0), v.max(axis=0)
        coord, value = {
            BOTTOM: (1, lo[1]), TOP: (1, hi[1]), LEFT: (0, lo[0]), RIGHT: (0, hi[0]),
        }[tag]
        on = self.tags != INTERIOR
        return np.nonzero(on & (np.abs(v[:, coord] - value) <= 1e-12))[0]

    def side_edges(self, side: str) -> np.ndarray:
        """Boundary edges (element, local a, local b) lying on a named side."""
        verts = np.zeros(self.n_vertices, dtype=bool)
        verts[self.side_vertices(side)] = True
        be = self.topology.boundary_edges
        el = self.elements
        a = el[be[:, 0], be[:, 1]]
        b = el[be[:, 0], be[:, 2]]
        return be[verts[a] & verts[b]]


def signed_area(mesh: TriMesh, element_id: int) -> float:
    return float(mesh.signed_areas[element_id])


def edge_matrix(mesh: TriMesh, element_id: int) -> np.ndarray:
    return mesh.edge_matrices[element_id].copy()


def structured_mesh(m: int, x0: float = 0.0, x1: float = 1.0,
                    y0: float = 0.0, y1: float = 1.0) -> TriMesh:
    """m-by-m grid of rectangles, each split into four triangles by both diagonals.

    Grid nodes come first (row-major from the bottom-left corner), followed by
    the m*m cell centres. Gives N = 4 m^2 elements.
    """
    if m < 1:
        raise MeshError("m must be positive")
    xs = np.linspace(x0, x1, m + 1)
    ys = np.linspace(y0, y1, m + 1)
    gx, gy = np.meshgrid(xs, ys)
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    cx, cy = np.meshgrid(0.5 * (xs[:-1] + xs[1:]), 0.5 * (ys[:-1] + ys[1:]))
    centres = np.column_stack([cx.ravel(), cy.ravel()])
    vertices = np.vstack([grid, centres])

    i, j = np.meshgrid(np.arange(m), np.arange(m))
    i, j = i.ravel(), j.ravel()
    n00 = j * (m + 1) + i
    n10 = n00 + 1
    n01 = n00 + (m + 1)
    n11 = n01 + 1
    c = (m + 1) ** 2 + j * m + i
    elements = np.stack([
        np.column_stack([n00, n10, c]),
        np.column_stack([n10, n11, c]),
        np.column_stack([n11, n01, c]),
        np.column_stack([n01, n00, c]),
    ], axis=1).reshape(-1, 3)

    tags = np.zeros(len(vertices), dtype=np.int64)
    gi, gj = np.meshgrid(np.arange(m + 1), np.arange(m + 1))
    gi, gj = gi.ravel(), gj.ravel()
    gt = tags[: (m + 1) ** 2]
    gt[gj == 0] = BOTTOM
    gt[gj == m] = TOP
    gt[gi == 0] = LEFT
    gt[gi == m] = RIGHT
    gt[((gi == 0) | (gi == m)) & ((gj == 0) | (gj == m))] = CORNER
    return TriMesh.from_arrays(vertices, elements, tags)


def barycentric(mesh: TriMesh, elements: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of points[i] with respect to elements[i]."""
    x0 = mesh.vertices[mesh.elements[elements, 0]]
    inv = mesh.inverse_edge_matrices[elements]
    b12 = np.einsum("nij,nj->ni", inv, points - x0)
    return np.column_stack([1.0 - b12.sum(axis=1), b12])


def _clamp(bary: np.ndarray) -> np.ndarray:
    b = np.clip(bary, 0.0, None)
    return b / b.sum(axis=1, keepdims=True)


def locate_points(mesh: TriMesh, points, hint=None):
    """Find the element containing each point.

    Returns ``(elements, bary, extrapolated)``. Points are located by walking
    across element neighbours from a seed element (``hint`` or the element
    with the nearest centroid). Points the walk cannot place are located by
    brute force over all elements; if no element contains a point within
    ``TOL_BC`` the best element is used with clamped coordinates and the
    point is flagged as extrapolated.
    """
    if mesh.n_elements == 0:
        raise MeshError("cannot locate points in an empty mesh")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    npts = len(points)
    if hint is None:
        _, cur = mesh._tree.query(points)
        cur = np.asarray(cur, dtype=np.int64)
    else:
        cur = np.array(hint, dtype=np.int64, copy=True)
    nbr = mesh.topology.element_neighbors
    elem = np.empty(npts, dtype=np.int64)
    bary = np.empty((npts, 3))
    active = np.arange(npts)
    max_steps = 20 + 4 * int(np.sqrt(mesh.n_elements))
    for _ in range(max_steps):
        if active.size == 0:
            break
        b = barycentric(mesh, cur[active], points[active])
        worst = b.argmin(axis=1)
        inside = b[np.arange(len(active)), worst] >= -TOL_BC
        done = active[inside]
        elem[done] = cur[done]
        bary[done] = b[inside]
        active = active[~inside]
        nxt = nbr[cur[active], worst[~inside]]
        stuck = nxt < 0
        # walk left the domain: settle those by brute force
        active_stuck = active[stuck]
        active = active[~stuck]
        cur[active] = nxt[~stuck]
        if active_stuck.size:
            _brute_force(mesh, points, active_stuck, elem, bary)
    extrapolated = np.zeros(npts, dtype=bool)
    if active.size:
        _brute_force(mesh, points, active, elem, bary)
    low = bary.min(axis=1) < -TOL_BC
    if np.any(low):
        extrapolated[low] = True
        bary[low] = _clamp(bary[low])
    return elem, bary, extrapolated


def _brute_force(mesh, points, idx, elem, bary):
    n = mesh.n_elements
    x0 = mesh.vertices[mesh.elements[:, 0]]
    inv = mesh.inverse_edge_matrices
    for i in idx:
        b12 = np.einsum("nij,nj->ni", inv, points[i] - x0)
        b = np.column_stack([1.0 - b12.sum(axis=1), b12])
        score = b.min(axis=1)
        k = int(np.argmax(score)) if n else 0
        elem[i] = k
        bary[i] = b[k]


def locate_point(mesh: TriMesh, point):
    """Single-point form of :func:`locate_points`; returns (element, bary, extrapolated)."""
    e, b, x = locate_points(mesh, np.asarray(point, dtype=float)[None, :])
    return int(e[0]), b[0], bool(x[0])


def interpolate_linear(source: TriMesh, values, points, hint=None) -> np.ndarray:
    """Evaluate the P1 interpolant of nodal ``values`` at ``points``."""
    values = np.asarray(values, dtype=float)
    if len(values) != source.n_vertices:
        raise MeshError("field does not live on the source mesh")
    elem, bary, _ = locate_points(source, points, hint)
    nodes = source.elements[elem]
    if values.ndim == 1:
        return (values[nodes] * bary).sum(axis=1)
    return np.einsum("pi,pi...->p...", bary, values[nodes])


def vertex_hint(mesh: TriMesh) -> np.ndarray:
    """One incident element per vertex; a good walk seed for moved copies."""
    el = mesh.elements
    hint = np.empty(mesh.n_vertices, dtype=np.int64)
    hint[el.ravel()[::-1]] = np.repeat(np.arange(len(el)), 3)[::-1]
    return hint
