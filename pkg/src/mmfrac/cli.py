"""Command-line entry point: ``mmfrac run|bench|sweep-alpha|mesh-demo``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import driver
from .driver import NewtonFailure, SolverSettings, initial_state, staggered_step
from .elasticity import METHODS
from .io import (ConfigError, OutputWriter, RunConfig, load_config, parse_config,
                 write_csv, write_vtk)
from .mesh import MeshError, structured_mesh
from .mmpde import (QUALITY_FIELDS, MeshEnergyParams, MeshInversionError, compute_metric,
                    move_mesh, quality_row)

log = logging.getLogger("mmfrac")

BENCHMARKS = ("tension", "shear", "two_crack", "five_crack", "ten_crack")


def run_config(cfg: RunConfig, out_dir=None):
    """Run a resolved configuration, writing all outputs; returns the final state.

    Raises :class:`NewtonFailure` after the failing step's diagnostics are on disk.
    """
    writer = OutputWriter(cfg, out_dir)
    last = {}

    def cb(state):
        last["state"] = state
        writer(state)
        log.info("step %d U=%.6g newton=%s(%d)", state.step, state.load,
                 "ok" if state.newton is None or state.newton.converged else "FAIL",
                 0 if state.newton is None else state.newton.iterations)

    try:
        state, _ = driver.run(cfg.problem(), cfg.settings, callback=cb,
                              max_steps=cfg.max_steps or None)
    finally:
        if "state" in last:
            writer.finish(last["state"])
    return state


def bench_config(name: str, coarse: bool, out: str | None, steps: int | None) -> RunConfig:
    text = f"[problem]\npreset = {name}\ncoarse = {str(coarse).lower()}\n"
    if steps is not None:
        text += f"max_steps = {steps}\n"
    cfg = parse_config(text)
    return replace(cfg, output_dir=out or f"output_{name}")


def sweep_alpha(method: str, values, out_dir, m: int = 21, l: float = 0.015,
                dU: float = 1e-5, settings: SolverSettings = SolverSettings()):
    """First tension step with k_l = 0 for each alpha; returns the Newton reports."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = driver.preset("tension")
    rows, reports = [], []
    for alpha in values:
        mat = replace(base.material, l=l, k_l=0.0, regularization=method,
                      alpha=0.0 if method == "none" else alpha)
        problem = replace(base, m=m, material=mat)
        state = staggered_step(initial_state(problem), dU, mat, problem.bc, settings)
        rep = state.newton
        rep.write_csv(out / f"newton_{method}_alpha{alpha:g}.csv")
        rows.append((alpha, int(rep.converged), rep.iterations,
                     rep.diff_history[-1] if rep.diff_history else float("nan"),
                     rep.final_residual_norm))
        reports.append(rep)
    write_csv(out / "sweep.csv",
              ["alpha", "converged", "iterations", "final_diff", "final_residual"], rows)
    return reports


def tanh_layer(x: np.ndarray, width: float = 0.02) -> np.ndarray:
    """Synthetic phase field with a sharp layer along the line x = y."""
    return 0.5 * (1.0 + np.tanh((x[:, 0] - x[:, 1]) / width))


def mesh_demo(out_dir, m: int = 40, moves: int = 5, params: MeshEnergyParams = MeshEnergyParams()):
    out = Path(out_dir)
    reference = structured_mesh(m)
    mesh = reference
    rows = []
    for k in range(moves + 1):
        d = tanh_layer(mesh.vertices)
        metric = compute_metric(mesh, d, params)
        q = quality_row(mesh, metric, params, reference)
        rows.append((k, *(q[f] for f in QUALITY_FIELDS[1:])))
        write_vtk(out / f"mesh_{k}.vtk", mesh, {"d": d})
        if k < moves:
            mesh, _ = move_mesh(mesh, d, reference, params, metric=metric)
    write_csv(out / "quality.csv", QUALITY_FIELDS, rows)
    return mesh, rows


def _floats(text: str):
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mmfrac", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a configuration file")
    p.add_argument("--config", required=True)
    p.add_argument("--out")

    p = sub.add_parser("bench", help="run a benchmark preset")
    p.add_argument("name", choices=BENCHMARKS)
    p.add_argument("--coarse", action="store_true", help="m=21, l=0.015 mm, <= 200 steps")
    p.add_argument("--out")
    p.add_argument("--steps", type=int)

    p = sub.add_parser("sweep-alpha", help="Newton convergence on the first tension step")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--values", required=True, type=_floats)
    p.add_argument("--out", default="output_sweep")
    p.add_argument("--m", type=int, default=21)
    p.add_argument("--l", type=float, default=0.015)

    p = sub.add_parser("mesh-demo", help="move a mesh towards a synthetic tanh layer")
    p.add_argument("--out", default="output_mesh_demo")
    p.add_argument("--m", type=int, default=40)
    p.add_argument("--moves", type=int, default=5)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            state = run_config(cfg, args.out)
            print(f"finished {state.step} steps, U = {state.load:.6g} mm")
        elif args.command == "bench":
            cfg = bench_config(args.name, args.coarse, args.out, args.steps)
            state = run_config(cfg)
            print(f"finished {state.step} steps, U = {state.load:.6g} mm -> {cfg.output_dir}")
        elif args.command == "sweep-alpha":
            reps = sweep_alpha(args.method, args.values, args.out, args.m, args.l)
            for a, r in zip(args.values, reps):
                print(f"alpha={a:g} converged={r.converged} iterations={r.iterations}")
        elif args.command == "mesh-demo":
            _, rows = mesh_demo(args.out, args.m, args.moves)
            print(f"equidistribution CV {rows[0][3]:.4f} -> {rows[-1][3]:.4f}")
    except NewtonFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, MeshError, MeshInversionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
