"""Plain Newton iteration with a finite-difference Jacobian.

The Jacobian is built column group by column group: dofs whose vertices are
more than two mesh edges apart never share a residual row, so they can be
perturbed together (distance-2 colouring of the vertex graph).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import TriMesh

SQRT_EPS = np.sqrt(np.finfo(float).eps)


@dataclass
class NewtonReport:
    converged: bool = False
    iterations: int = 0
    diff_history: list[float] = field(default_factory=list)
    final_residual_norm: float = np.nan
    message: str = ""

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "diff_L2"])
            for i, diff in enumerate(self.diff_history, start=1):
                w.writerow([i, f"{diff:.17g}"])


class SingularJacobian(RuntimeError):
    pass


@dataclass(frozen=True)
class ColoredPattern:
    """Sparsity pattern of a mesh residual plus a structurally orthogonal colouring."""

    rows: np.ndarray
    cols: np.ndarray
    colors: np.ndarray  # per column
    n: int

    @property
    def n_colors(self) -> int:
        return int(self.colors.max()) + 1 if self.colors.size else 0


def greedy_distance2_coloring(adjacency: sp.csr_matrix) -> np.ndarray:
    """Greedy colouring of the square of a graph (adjacency includes the diagonal)."""
    a2 = (adjacency @ adjacency).tocsr()
    n = a2.shape[0]
    colors = -np.ones(n, dtype=np.int64)
    for v in range(n):
        nb = a2.indices[a2.indptr[v]:a2.indptr[v + 1]]
        used = set(colors[nb][colors[nb] >= 0].tolist())
        c = 0
        while c in used:
            c += 1
        colors[v] = c
    return colors


def mesh_jacobian_pattern(mesh: TriMesh, components: int = 2) -> ColoredPattern:
    """Pattern for interleaved vector dofs coupled through shared elements."""
    adj = mesh.topology.adjacency.tocoo()
    vc = greedy_distance2_coloring(mesh.topology.adjacency)
    nc = int(vc.max()) + 1
    rows, cols = [], []
    for a in range(components):
        for b in range(components):
            rows.append(components * adj.row + a)
            cols.append(components * adj.col + b)
    colors = np.empty(components * mesh.n_vertices, dtype=np.int64)
    for a in range(components):
        colors[a::components] = vc + a * nc
    return ColoredPattern(np.concatenate(rows), np.concatenate(cols), colors,
                          components * mesh.n_vertices)


def fd_step(u) -> np.ndarray:
    return SQRT_EPS * (1.0 + np.abs(u))


def fd_jacobian(residual_fn: Callable, u, pattern: ColoredPattern | None = None,
                r0=None) -> sp.csr_matrix:
    """One-sided finite-difference Jacobian, columns (R(u + h_j e_j) - R(u)) / h_j.

    Without a pattern every column is perturbed separately and the result is
    dense (stored sparse).
    """
    u = np.asarray(u, dtype=float)
    n = u.size
    r0 = residual_fn(u) if r0 is None else r0
    h = fd_step(u)
    if pattern is None:
        cols = []
        for j in range(n):
            up = u.copy()
            up[j] += h[j]
            # actual step after rounding keeps linear maps exact to roundoff
            cols.append((residual_fn(up) - r0) / (up[j] - u[j]))
        return sp.csr_matrix(np.column_stack(cols) if cols else np.zeros((r0.size, 0)))
    if pattern.n != n:
        raise ValueError("pattern size does not match u")
    vals = np.empty(pattern.rows.size)
    entry_color = pattern.colors[pattern.cols]
    order = np.argsort(entry_color, kind="stable")
    bounds = np.searchsorted(entry_color[order], np.arange(pattern.n_colors + 1))
    for c in range(pattern.n_colors):
        group = pattern.colors == c
        up = u.copy()
        up[group] += h[group]
        step = up - u
        dr = residual_fn(up) - r0
        idx = order[bounds[c]:bounds[c + 1]]
        vals[idx] = dr[pattern.rows[idx]] / step[pattern.cols[idx]]
    return sp.csr_matrix((vals, (pattern.rows, pattern.cols)), shape=(r0.size, n))


def newton_solve(residual_fn: Callable, u0, tol_diff: float = 1e-8, max_iter: int = 50,
                 pattern: ColoredPattern | None = None, free=None,
                 norm: Callable | None = None):
    """Newton's method u <- u - J^{-1} R(u) on the free dofs.

    Converged when ``norm(u_new - u_old) <= tol_diff``. Running out of
    iterations or hitting a singular Jacobian is reported, not raised.
    """
    u = np.array(u0, dtype=float)
    n = u.size
    free = np.ones(n, dtype=bool) if free is None else np.asarray(free, dtype=bool)
    norm = norm or np.linalg.norm
    report = NewtonReport()
    r = residual_fn(u)
    for it in range(max_iter):
        J = fd_jacobian(residual_fn, u, pattern, r0=r).tocsr()
        Jff = J[free][:, free].tocsc()
        try:
            delta = spla.splu(Jff).solve(-r[free])
        except RuntimeError as exc:
            report.message = f"singular Jacobian: {exc}"
            break
        if not np.all(np.isfinite(delta)):
            report.message = "non-finite Newton update"
            break
        step = np.zeros(n)
        step[free] = delta
        u = u + step
        r = residual_fn(u)
        diff = float(norm(step))
        report.iterations = it + 1
        report.diff_history.append(diff)
        if diff <= tol_diff:
            report.converged = True
            report.message = "converged"
            break
    else:
        report.message = f"no convergence in {max_iter} iterations"
    report.final_residual_norm = float(np.linalg.norm(r[free]))
    return u, report
