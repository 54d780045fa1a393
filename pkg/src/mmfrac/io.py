"""Run configuration (INI) and ASCII outputs: CSV tables and legacy VTK meshes.

All files are written to a temporary name and renamed into place, and every
float goes out with 17 significant digits so reruns are byte-comparable.
"""

from __future__ import annotations

import configparser
import os
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .driver import (PRESET_NAMES, SHEAR_BC, TENSION_BC, CrackSegment, LoadSchedule,
                     ProblemPreset, SimulationState, SolverSettings, load_force,
                     preset)
from .elasticity import MaterialModel
from .mesh import TriMesh, interpolate_linear
from .mmpde import QUALITY_FIELDS, MeshEnergyParams, compute_metric, quality_row


class ConfigError(ValueError):
    pass


def fmt(x: float) -> str:
    return f"{x:.17g}"


# --- configuration ------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    preset: str = "tension"
    coarse: bool = False
    m: int = 40
    domain: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)
    cracks: tuple[CrackSegment, ...] = ()
    loading: str = "tension"
    schedule: LoadSchedule = LoadSchedule(((1e-5, 500), (1e-6, 1500)))
    max_steps: int = 0  # 0 runs the whole schedule
    material: MaterialModel = field(default_factory=MaterialModel)
    settings: SolverSettings = field(default_factory=SolverSettings)
    output_dir: str = "output"
    snapshot_every: int = 10
    snapshot_drop: float = 0.05

    def problem(self) -> ProblemPreset:
        bc, comp = (TENSION_BC, "y") if self.loading == "tension" else (SHEAR_BC, "x")
        return ProblemPreset(self.preset, self.domain, self.cracks, bc, self.material,
                             self.m, self.schedule, comp)


_MATERIAL_KEYS = ("lam", "mu", "g_c", "l", "k_l", "regularization", "alpha")
_SOLVER_KEYS = ("kk", "tol_diff", "max_iter", "adaptive")
_MMPDE_KEYS = ("theta", "p", "tau", "smoothing_sweeps", "move_time")
_PROBLEM_KEYS = ("preset", "coarse", "m", "domain", "cracks", "loading", "schedule", "max_steps")
_OUTPUT_KEYS = ("directory", "snapshot_every", "snapshot_drop")
SECTIONS = {"problem": _PROBLEM_KEYS, "material": _MATERIAL_KEYS, "solver": _SOLVER_KEYS,
            "mmpde": _MMPDE_KEYS, "output": _OUTPUT_KEYS}


def _floats(text: str, n: int | None = None) -> tuple[float, ...]:
    vals = tuple(float(v) for v in text.replace(",", " ").split())
    if n is not None and len(vals) != n:
        raise ConfigError(f"expected {n} numbers, got {text!r}")
    return vals


def _parse_cracks(text: str) -> tuple[CrackSegment, ...]:
    out = []
    for item in text.split(";"):
        if item.strip():
            cx, cy, length, angle = _floats(item, 4)
            if not length > 0:
                raise ConfigError("crack length must be positive")
            out.append(CrackSegment((cx, cy), length, angle))
    return tuple(out)


def _parse_schedule(text: str) -> LoadSchedule:
    stages = []
    for item in text.replace(",", " ").split():
        inc, _, count = item.partition("x")
        try:
            stages.append((float(inc), int(count) if count else 1))
        except ValueError as exc:
            raise ConfigError(f"bad schedule stage {item!r}") from exc
    return LoadSchedule(tuple(stages))


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_config(text: str) -> RunConfig:
    """Parse INI text into a fully resolved :class:`RunConfig`.

    Preset values (optionally scaled with ``coarse``) are the defaults; any key
    given explicitly overrides them. Unknown sections or keys are errors.
    """
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        for key in cp[sec]:
            if key not in SECTIONS[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")

    def get(sec, key):
        return cp[sec][key] if cp.has_section(sec) and key in cp[sec] else None

    try:
        name = (get("problem", "preset") or "tension").strip()
        if name not in PRESET_NAMES:
            raise ConfigError(f"unknown preset {name!r}")
        coarse = _bool(get("problem", "coarse") or "false")
        if name == "custom":
            base = replace(preset("tension", coarse), name="custom", cracks=())
        else:
            base = preset(name, coarse)
        loading = "shear" if base.bc is SHEAR_BC else "tension"
        if (v := get("problem", "loading")) is not None:
            loading = v.strip()
            if loading not in ("tension", "shear"):
                raise ConfigError("loading must be 'tension' or 'shear'")
        m = int(get("problem", "m") or base.m)
        if m < 1:
            raise ConfigError("m must be positive")
        domain = base.domain
        if (v := get("problem", "domain")) is not None:
            domain = _floats(v, 4)
            if not (domain[1] > domain[0] and domain[3] > domain[2]):
                raise ConfigError("empty domain")
        cracks = base.cracks
        if (v := get("problem", "cracks")) is not None:
            cracks = _parse_cracks(v)
        schedule = base.schedule
        if (v := get("problem", "schedule")) is not None:
            schedule = _parse_schedule(v)
        max_steps = int(get("problem", "max_steps") or 0)
        if max_steps < 0:
            raise ConfigError("max_steps must be non-negative")

        mat = {}
        for k in _MATERIAL_KEYS:
            if (v := get("material", k)) is not None:
                mat[k] = v.strip() if k == "regularization" else float(v)
        material = replace(base.material, **mat)

        mm = {}
        for k in _MMPDE_KEYS:
            if (v := get("mmpde", k)) is not None:
                mm[k] = int(v) if k == "smoothing_sweeps" else float(v)
        mmpde = MeshEnergyParams(**mm)

        sv = {}
        for k in _SOLVER_KEYS:
            if (v := get("solver", k)) is not None:
                sv[k] = {"kk": int, "max_iter": int, "adaptive": _bool}.get(k, float)(v)
        settings = SolverSettings(mmpde=mmpde, **sv)
        if settings.max_iter < 1 or not settings.tol_diff > 0:
            raise ConfigError("max_iter must be >= 1 and tol_diff > 0")

        out = get("output", "directory") or "output"
        every = int(get("output", "snapshot_every") or 10)
        drop = float(get("output", "snapshot_drop") or 0.05)
        if every < 1 or not drop > 0:
            raise ConfigError("snapshot_every must be >= 1 and snapshot_drop > 0")
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(name, coarse, m, tuple(domain), cracks, loading, schedule, max_steps,
                     material, settings, out, every, drop)


def _num(x) -> str:
    return repr(float(x))


def emit_config(cfg: RunConfig) -> str:
    """Serialize every resolved value, so ``parse_config(emit_config(c)) == c``."""
    mat, st, mm = cfg.material, cfg.settings, cfg.settings.mmpde
    lines = ["[problem]",
             f"preset = {cfg.preset}",
             f"coarse = {str(cfg.coarse).lower()}",
             f"m = {cfg.m}",
             "domain = " + ", ".join(_num(v) for v in cfg.domain),
             "cracks = " + "; ".join(" ".join(_num(v) for v in (*c.center, c.length, c.angle))
                                     for c in cfg.cracks),
             f"loading = {cfg.loading}",
             "schedule = " + ", ".join(f"{_num(i)}x{n}" for i, n in cfg.schedule.stages),
             f"max_steps = {cfg.max_steps}",
             "", "[material]"]
    lines += [f"{k} = {getattr(mat, k) if k == 'regularization' else _num(getattr(mat, k))}"
              for k in _MATERIAL_KEYS]
    lines += ["", "[solver]", f"kk = {st.kk}", f"tol_diff = {_num(st.tol_diff)}",
              f"max_iter = {st.max_iter}", f"adaptive = {str(st.adaptive).lower()}",
              "", "[mmpde]"]
    lines += [f"{k} = {mm.smoothing_sweeps}" if k == "smoothing_sweeps"
              else f"{k} = {_num(getattr(mm, k))}" for k in _MMPDE_KEYS]
    lines += ["", "[output]", f"directory = {cfg.output_dir}",
              f"snapshot_every = {cfg.snapshot_every}",
              f"snapshot_drop = {_num(cfg.snapshot_drop)}", ""]
    return "\n".join(lines)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


# --- writers -------------------------------------------------------------------------

def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n", encoding="ascii") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows) -> str:
    out = [",".join(header)]
    for row in rows:
        out.append(",".join(str(v) if isinstance(v, (int, np.integer)) else fmt(v) for v in row))
    return "\n".join(out) + "\n"


def write_csv(path, header, rows) -> None:
    atomic_write(path, csv_text(header, rows))


def vtk_text(mesh: TriMesh, point_data: dict[str, np.ndarray], title="mmfrac") -> str:
    """Legacy ASCII VTK (version 3.0) unstructured grid of triangles."""
    nv, ne = mesh.n_vertices, mesh.n_elements
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {nv} double"]
    out += [f"{fmt(x)} {fmt(y)} 0" for x, y in mesh.vertices]
    out.append(f"CELLS {ne} {4 * ne}")
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.elements]
    out.append(f"CELL_TYPES {ne}")
    out += ["5"] * ne
    if point_data:
        out.append(f"POINT_DATA {nv}")
    for name, values in point_data.items():
        v = np.asarray(values, dtype=float).reshape(nv, -1)
        if v.shape[1] == 1:
            out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            out += [fmt(a) for a in v[:, 0]]
        elif v.shape[1] == 2:
            out.append(f"VECTORS {name} double")
            out += [f"{fmt(a)} {fmt(b)} 0" for a, b in v]
        else:
            raise ValueError(f"unsupported field width for {name!r}")
    return "\n".join(out) + "\n"


def write_vtk(path, mesh: TriMesh, point_data: dict[str, np.ndarray]) -> None:
    atomic_write(path, vtk_text(mesh, point_data))


LOAD_HEADER = ["step", "U_mm", "F_x_kN", "F_y_kN"]
NEWTON_HEADER = ["iter", "diff_L2"]


class OutputWriter:
    """Callback for :func:`mmfrac.driver.run` that persists every output family."""

    def __init__(self, cfg: RunConfig, out_dir=None):
        self.cfg = cfg
        self.dir = Path(out_dir or cfg.output_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.load_rows: list = []
        self.quality_rows: list = []
        self.snapshots: list[int] = []
        self._prev: SimulationState | None = None
        atomic_write(self.dir / "resolved_config.ini", emit_config(cfg))
        write_csv(self.dir / "load_deflection.csv", LOAD_HEADER, [])
        write_csv(self.dir / "quality.csv", QUALITY_FIELDS, [])

    def _snapshot(self, state: SimulationState) -> None:
        write_vtk(self.dir / f"mesh_{state.step}.vtk", state.mesh,
                  {"d": state.d, "u": state.u, "H": state.H})
        self.snapshots.append(state.step)

    def _needs_snapshot(self, state: SimulationState) -> bool:
        if state.step % self.cfg.snapshot_every == 0:
            return True
        prev = self._prev
        if prev is None:
            return True
        d_old = interpolate_linear(prev.mesh, prev.d, state.mesh.vertices)
        return bool(np.max(d_old - state.d) > self.cfg.snapshot_drop)

    def __call__(self, state: SimulationState) -> None:
        if state.step > 0:
            fx, fy = load_force(state, self.cfg.material)
            self.load_rows.append((state.step, state.load, fx, fy))
            write_csv(self.dir / "load_deflection.csv", LOAD_HEADER, self.load_rows)
            state.newton.write_csv(self.dir / f"newton_step{state.step}.csv")
            prm = self.cfg.settings.mmpde
            q = quality_row(state.mesh, compute_metric(state.mesh, state.d, prm), prm,
                            state.reference)
            self.quality_rows.append((state.step, *(q[k] for k in QUALITY_FIELDS[1:])))
            write_csv(self.dir / "quality.csv", QUALITY_FIELDS, self.quality_rows)
        failed = state.newton is not None and not state.newton.converged
        if self._needs_snapshot(state) or failed:
            self._snapshot(state)
        self._prev = state

    def finish(self, state: SimulationState) -> None:
        if state.step not in self.snapshots:
            self._snapshot(state)


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Header and numeric body of a CSV written by this module."""
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    body = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]]).reshape(-1, len(header))
    return header, body

