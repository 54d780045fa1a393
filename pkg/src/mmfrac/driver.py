"""Quasi-static staggered solver with moving-mesh adaptation, and benchmark presets."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator

import numpy as np

from . import fem
from .elasticity import MaterialModel, history_update, psi_plus
from .fem import BoundaryConditions, DirichletBC, ElasticOperator
from .mesh import MeshError, TriMesh, interpolate_linear, structured_mesh
from .mmpde import MeshEnergyParams, MetricField, compute_metric, move_mesh
from .newton import NewtonReport, mesh_jacobian_pattern, newton_solve

log = logging.getLogger(__name__)

PRESET_NAMES = ("tension", "shear", "two_crack", "five_crack", "ten_crack", "custom")


class NewtonFailure(RuntimeError):
    def __init__(self, step: int, report: NewtonReport):
        super().__init__(f"Newton failed at step {step}: {report.message}")
        self.step = step
        self.report = report


@dataclass(frozen=True)
class CrackSegment:
    """Straight initial crack given by centre, length (mm) and polar angle (degrees)."""

    center: tuple[float, float]
    length: float
    angle: float = 0.0

    @property
    def endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center, dtype=float)
        t = np.deg2rad(self.angle)
        half = 0.5 * self.length * np.array([np.cos(t), np.sin(t)])
        return c - half, c + half

    @classmethod
    def from_endpoints(cls, a, b) -> "CrackSegment":
        a, b = np.asarray(a, float), np.asarray(b, float)
        v = b - a
        c = 0.5 * (a + b)
        return cls((float(c[0]), float(c[1])), float(np.hypot(*v)),
                   float(np.rad2deg(np.arctan2(v[1], v[0]))))


@dataclass(frozen=True)
class LoadSchedule:
    """Piecewise constant load increments as (increment, repeat count) stages."""

    stages: tuple[tuple[float, int], ...]

    def __post_init__(self):
        for inc, count in self.stages:
            if not inc > 0:
                raise ValueError("load increments must be positive")
            if count < 0:
                raise ValueError("repeat counts must be non-negative")

    @property
    def total_steps(self) -> int:
        return sum(c for _, c in self.stages)

    def increments(self) -> Iterator[float]:
        for inc, count in self.stages:
            for _ in range(count):
                yield inc

    def truncated(self, n: int) -> "LoadSchedule":
        out, left = [], n
        for inc, count in self.stages:
            take = min(count, left)
            if take:
                out.append((inc, take))
            left -= take
        return LoadSchedule(tuple(out))


@dataclass(frozen=True)
class ProblemPreset:
    name: str
    domain: tuple[float, float, float, float]  # x0, x1, y0, y1
    cracks: tuple[CrackSegment, ...]
    bc: BoundaryConditions
    material: MaterialModel
    m: int
    schedule: LoadSchedule
    force_component: str = "y"  # reported component of the top-edge load vector

    def __post_init__(self):
        if self.name not in PRESET_NAMES:
            raise ValueError(f"unknown preset {self.name!r}")
        if self.force_component not in ("x", "y"):
            raise ValueError("force_component must be 'x' or 'y'")


@dataclass(frozen=True)
class SolverSettings:
    kk: int = 5
    mmpde: MeshEnergyParams = field(default_factory=MeshEnergyParams)
    tol_diff: float = 1e-8
    max_iter: int = 50
    adaptive: bool = True

    def __post_init__(self):
        if self.kk < 1:
            raise ValueError("kk must be at least 1")


@dataclass
class SimulationState:
    step: int
    load: float
    mesh: TriMesh
    d: np.ndarray
    u: np.ndarray
    H: np.ndarray
    reference: TriMesh
    newton: NewtonReport | None = None
    H_transported: np.ndarray | None = None  # interpolated H^n on the new mesh
    metric: MetricField | None = None
    cracks: tuple[CrackSegment, ...] = ()  # initial cracks, re-seeded on every mesh


TENSION_BC = BoundaryConditions((DirichletBC("bottom", "both", 0.0),
                                 DirichletBC("top", "x", 0.0),
                                 DirichletBC("top", "y", 1.0)))
SHEAR_BC = BoundaryConditions((DirichletBC("bottom", "both", 0.0),
                               DirichletBC("top", "y", 0.0),
                               DirichletBC("top", "x", 1.0)))

_UNIT = (0.0, 1.0, 0.0, 1.0)
_PLATE = (-1.0, 1.0, -1.0, 1.0)
_NOTCH = (CrackSegment.from_endpoints((0.0, 0.5), (0.5, 0.5)),)

_FIVE = tuple(CrackSegment(c, L, a) for c, L, a in zip(
    [(-0.6, 0.3), (0.0, 0.5), (0.6, 0.5), (-0.5, -0.4), (0.5, -0.2)],
    [0.3, 0.35, 0.35, 0.5, 0.5], [30.0, 45.0, 17.0, 28.6, 9.0]))
_TEN = tuple(CrackSegment(c, 0.1, a) for c, a in zip(
    [(-0.5, 0.8), (0.2, 0.8), (-0.3, 0.3), (0.5, 0.5), (0.0, 0.0),
     (-0.7, -0.2), (-0.5, -0.5), (-0.1, -0.8), (0.5, -0.75), (0.7, -0.2)],
    [40.0, 45.0, 109.0, 132.0, 143.0, 40.0, 45.0, 120.0, 40.0, 115.0]))

COARSE_M = 21
COARSE_L = 0.015
COARSE_MAX_STEPS = 200


def preset(name: str, coarse: bool = False) -> ProblemPreset:
    """Benchmark definitions; ``coarse`` scales to m=21, l=0.015 mm, <= 200 steps."""
    base = MaterialModel()
    if name == "tension":
        p = ProblemPreset(name, _UNIT, _NOTCH, TENSION_BC, replace(base, l=0.0075), 40,
                          LoadSchedule(((1e-5, 500), (1e-6, 1500))), "y")
        if coarse:
            p = replace(p, schedule=LoadSchedule(((1e-4, 40), (2.5e-5, 160))))
    elif name == "shear":
        p = ProblemPreset(name, _UNIT, _NOTCH, SHEAR_BC, replace(base, l=0.0075), 40,
                          LoadSchedule(((1e-5, 2000),)), "x")
        if coarse:
            p = replace(p, schedule=LoadSchedule(((1e-4, 200),)))
    elif name == "two_crack":
        p = ProblemPreset(name, _PLATE,
                          (CrackSegment((-0.2, 0.0), 0.6, 9.0), CrackSegment((0.46, 0.0), 0.8, 65.0)),
                          TENSION_BC, replace(base, l=0.00375), 50,
                          LoadSchedule(((1e-4, 200),)), "y")
    elif name == "five_crack":
        p = ProblemPreset(name, _PLATE, _FIVE, TENSION_BC,
                          replace(base, l=0.00375, g_c=2.7e-4), 50,
                          LoadSchedule(((1e-4, 200),)), "y")
    elif name == "ten_crack":
        p = ProblemPreset(name, _PLATE, _TEN, TENSION_BC,
                          replace(base, l=0.00375, g_c=2.7e-4), 100,
                          LoadSchedule(((1e-4, 300),)), "y")
    else:
        raise ValueError(f"unknown preset {name!r}")
    if coarse:
        p = replace(p, m=COARSE_M, material=replace(p.material, l=COARSE_L),
                    schedule=p.schedule.truncated(COARSE_MAX_STEPS))
    return p


# --- initial cracks ---------------------------------------------------------------

def segment_distance(points, a, b) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    a, b = np.asarray(a, float), np.asarray(b, float)
    ab = b - a
    t = np.clip((points - a) @ ab / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(points - (a + t[:, None] * ab), axis=1)


def init_cracks(mesh: TriMesh, cracks, material: MaterialModel) -> np.ndarray:
    """History field that makes the first phase-field solve open the given cracks.

    H0 = H_seed max(0, 1 - dist/w) summed over segments with
    H_seed = 1e3 g_c / (4 l) and w = 2 l.
    """
    H = np.zeros(mesh.n_vertices)
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    h_seed = 1e3 * material.g_c / (4.0 * material.l)
    w = 2.0 * material.l
    for seg in cracks:
        a, b = seg.endpoints
        for p in (a, b):
            if np.any(p < lo - 1e-12) or np.any(p > hi + 1e-12):
                raise MeshError("crack segment leaves the domain")
        H += h_seed * np.maximum(0.0, 1.0 - segment_distance(mesh.vertices, a, b) / w)
    return H


def driving_field(mesh: TriMesh, H, cracks, material: MaterialModel) -> np.ndarray:
    """History seen by the phase-field solve: max of H and the crack seed.

    The seed is evaluated on the current vertices instead of being transported,
    so mesh motion cannot smear it into a blunt notch.
    """
    if not cracks:
        return H
    return np.maximum(H, init_cracks(mesh, cracks, material))


def initial_state(problem: ProblemPreset) -> SimulationState:
    x0, x1, y0, y1 = problem.domain
    mesh = structured_mesh(problem.m, x0, x1, y0, y1)
    seed = init_cracks(mesh, problem.cracks, problem.material)
    d = fem.solve_phase_field(mesh, seed, problem.material)
    return SimulationState(0, 0.0, mesh, d, np.zeros(2 * mesh.n_vertices),
                           np.zeros(mesh.n_vertices), mesh, cracks=tuple(problem.cracks))


# --- staggered step ------------------------------------------------------------------

def _pattern(mesh: TriMesh):
    topo = mesh.topology
    pat = getattr(topo, "_jacobian_pattern", None)
    if pat is None:
        pat = mesh_jacobian_pattern(mesh)
        topo._jacobian_pattern = pat
    return pat


def nodal_psi_plus(mesh: TriMesh, u, material: MaterialModel) -> np.ndarray:
    """Element tensile energy averaged to the vertices (area weighted)."""
    return fem.nodal_average(mesh, psi_plus(fem.element_strains(mesh, u), material))


def solve_displacement(mesh, d, u0, material, bc, load, settings: SolverSettings):
    op = ElasticOperator(mesh, d, material, bc, load)
    u0 = op.apply_dirichlet(u0)
    # Diff is the Euclidean norm of the nodal update vector
    return newton_solve(op.residual, u0, settings.tol_diff, settings.max_iter,
                        pattern=_pattern(mesh), free=op.free)


def staggered_step(state: SimulationState, dU: float, material: MaterialModel,
                   bc: BoundaryConditions, settings: SolverSettings = SolverSettings()
                   ) -> SimulationState:
    """Advance one load increment: d/mesh loop, displacement solve, history update.

    A non-converged Newton solve is attached to the returned state; the caller
    decides whether to stop.
    """
    old = state.mesh
    mesh = old
    prm = settings.mmpde
    metric = None
    for k in range(1, settings.kk + 1):
        H_k = state.H if mesh is old else interpolate_linear(old, state.H, mesh.vertices)
        d = fem.solve_phase_field(mesh, driving_field(mesh, H_k, state.cracks, material),
                                  material)
        if k < settings.kk and settings.adaptive:
            metric = compute_metric(mesh, d, prm)
            mesh, _ = move_mesh(mesh, d, state.reference, prm, metric=metric)
    load = state.load + dU
    u0 = state.u if mesh is old else interpolate_linear(
        old, state.u.reshape(-1, 2), mesh.vertices).ravel()
    u, report = solve_displacement(mesh, d, u0, material, bc, load, settings)
    H_tilde = state.H if mesh is old else interpolate_linear(old, state.H, mesh.vertices)
    H_new = history_update(nodal_psi_plus(mesh, u, material), H_tilde)
    return SimulationState(state.step + 1, load, mesh, d, u, H_new, state.reference,
                           report, H_tilde, metric, state.cracks)


def load_force(state: SimulationState, material: MaterialModel) -> tuple[float, float]:
    return fem.load_vector(state.mesh, state.u, state.d, material, "top")


def run(problem: ProblemPreset, settings: SolverSettings = SolverSettings(),
        callback: Callable[[SimulationState], None] | None = None,
        max_steps: int | None = None) -> tuple[SimulationState, list[SimulationState]]:
    """Execute the load schedule in memory.

    ``callback`` is invoked with the initial state and after every step. Raises
    :class:`NewtonFailure` (after the callback has seen the failed state) when
    the displacement solve does not converge.
    """
    state = initial_state(problem)
    if callback:
        callback(state)
    history = []
    for i, dU in enumerate(problem.schedule.increments()):
        if max_steps is not None and i >= max_steps:
            break
        state = staggered_step(state, dU, problem.material, problem.bc, settings)
        history.append(state)
        if callback:
            callback(state)
        if not state.newton.converged:
            raise NewtonFailure(state.step, state.newton)
    return state, history
