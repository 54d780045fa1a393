"""Phase-field fracture with MMPDE moving-mesh adaptation and regularized strain splits."""

from .driver import (CrackSegment, LoadSchedule, ProblemPreset, SimulationState,
                     SolverSettings, init_cracks, preset, run, staggered_step)
from .elasticity import MaterialModel
from .mesh import TriMesh, structured_mesh
from .mmpde import MeshEnergyParams, move_mesh
from .newton import NewtonReport, newton_solve

__version__ = "0.1.0"

__all__ = [
    "CrackSegment", "LoadSchedule", "MaterialModel", "MeshEnergyParams", "NewtonReport",
    "ProblemPreset", "SimulationState", "SolverSettings", "TriMesh", "init_cracks",
    "move_mesh", "newton_solve", "preset", "run", "staggered_step", "structured_mesh",
]
