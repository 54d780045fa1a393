import numpy as np
import pytest

from mmfrac.cli import main
from mmfrac.io import (LOAD_HEADER, NEWTON_HEADER, ConfigError, emit_config, parse_config,
                       read_csv, write_vtk)
from mmfrac.mesh import structured_mesh

TINY = """[problem]
preset = tension
coarse = true
m = 6
schedule = {schedule}

[output]
directory = {out}
"""


def test_defaults_for_tension():
    cfg = parse_config("[problem]\npreset = tension\n")
    mat = cfg.material
    assert (mat.lam, mat.mu, mat.g_c, mat.l) == (121.15, 80.77, 2.7e-3, 0.0075)
    assert (mat.regularization, mat.alpha) == ("sonic_point", 1e-3)
    assert cfg.settings.kk == 5
    assert cfg.settings.mmpde.theta == pytest.approx(1 / 3)
    assert cfg.settings.mmpde.p == 1.5
    assert parse_config("").preset == "tension"


@pytest.mark.parametrize("text", [
    "[material]\nalpha = -1\n",
    "[material]\nalpha = 0\n",
    "[material]\nregularization = cubic\n",
    "[material]\nwobble = 1\n",
    "[extras]\nx = 1\n",
    "[problem]\npreset = arch\n",
    "[problem]\nm = 0\n",
    "[problem]\nschedule = 1e-4xq\n",
    "[solver]\nkk = 0\n",
    "[mmpde]\ntheta = 0.7\n",
    "[output]\nsnapshot_every = 0\n",
    "not an ini file",
])
def test_invalid_configs_raise(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_alpha_zero_allowed_without_regularization():
    cfg = parse_config("[material]\nregularization = none\nalpha = 0\n")
    assert cfg.material.alpha == 0.0


@pytest.mark.parametrize("text", [
    "",
    "[problem]\npreset = shear\ncoarse = true\n",
    "[problem]\npreset = custom\ncracks = 0.1 0.2 0.3 17; 0.5 0.5 0.1 -3\n"
    "loading = shear\ndomain = 0, 2, 0, 1\nschedule = 1e-4x3 3e-5x2\n"
    "[material]\nl = 0.01\nregularization = exp_convolution\nalpha = 2.5e-4\n"
    "[mmpde]\ntau = 0.03\nsmoothing_sweeps = 0\n[solver]\nadaptive = false\n",
])
def test_config_round_trip(text):
    cfg = parse_config(text)
    again = parse_config(emit_config(cfg))
    assert again == cfg
    assert emit_config(again) == emit_config(cfg)


def test_custom_problem_uses_given_geometry():
    cfg = parse_config("[problem]\npreset = custom\nloading = shear\n"
                       "cracks = 0.25 0.5 0.5 0\n")
    p = cfg.problem()
    assert p.force_component == "x"
    assert len(p.cracks) == 1


def test_zero_step_run(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(TINY.format(schedule="", out=tmp_path / "o"))
    assert main(["run", "--config", str(cfg)]) == 0
    out = tmp_path / "o"
    header, rows = read_csv(out / "load_deflection.csv")
    assert header == LOAD_HEADER
    assert rows.shape[0] == 0
    assert (out / "mesh_0.vtk").exists()
    assert (out / "quality.csv").exists()
    assert (out / "resolved_config.ini").exists()


def test_two_step_run(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(TINY.format(schedule="1e-4x2", out=tmp_path / "o"))
    assert main(["run", "--config", str(cfg)]) == 0
    out = tmp_path / "o"
    _, rows = read_csv(out / "load_deflection.csv")
    assert rows.shape[0] == 2
    assert list(rows[:, 0]) == [1, 2]
    assert rows[1, 1] == pytest.approx(2e-4)
    header, newton = read_csv(out / "newton_step2.csv")
    assert header == NEWTON_HEADER
    assert newton[-1, 1] <= 1e-8
    # resolved config reproduces the run
    rerun = parse_config((out / "resolved_config.ini").read_text())
    assert rerun == parse_config(cfg.read_text())


def test_csv_floats_have_17_digits(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(TINY.format(schedule="1e-4x1", out=tmp_path / "o"))
    main(["run", "--config", str(cfg)])
    line = (tmp_path / "o" / "load_deflection.csv").read_text().splitlines()[1]
    f_y = line.split(",")[3]
    assert float(f_y) != 0.0
    assert f_y == format(float(f_y), ".17g")


def test_vtk_read_by_meshio(tmp_path):
    meshio = pytest.importorskip("meshio")
    mesh = structured_mesh(5)
    d = np.linspace(0, 1, mesh.n_vertices)
    write_vtk(tmp_path / "m.vtk", mesh, {"d": d, "u": np.zeros(2 * mesh.n_vertices)})
    text = (tmp_path / "m.vtk").read_text()
    assert text.startswith("# vtk DataFile Version 3.0")
    m = meshio.read(tmp_path / "m.vtk")
    assert len(m.points) == mesh.n_vertices
    assert sum(len(c.data) for c in m.cells) == mesh.n_elements
    assert np.allclose(m.point_data["d"].ravel(), d)


def test_unknown_subcommand(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_bad_config_exits_nonzero(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[material]\nalpha = -1\n")
    assert main(["run", "--config", str(cfg)]) == 2
    assert "error" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.ini")]) == 2


def test_newton_failure_in_run_exits_nonzero(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(TINY.format(schedule="1e-4x2", out=tmp_path / "o")
                   + "[solver]\nmax_iter = 1\n")
    assert main(["run", "--config", str(cfg)]) == 3
    # diagnostics of the failing step are on disk
    assert (tmp_path / "o" / "newton_step1.csv").exists()


def test_sweep_alpha(tmp_path, capsys):
    out = tmp_path / "s"
    assert main(["sweep-alpha", "--method", "sonic_point", "--values", "1e-4,1e-3",
                 "--out", str(out), "--m", "11"]) == 0
    for a in ("0.0001", "0.001"):
        _, rows = read_csv(out / f"newton_sonic_point_alpha{a}.csv")
        assert rows[-1, 1] <= 1e-8
    _, sweep = read_csv(out / "sweep.csv")
    assert sweep[:, 1].tolist() == [1, 1]


def test_mesh_demo(tmp_path):
    assert main(["mesh-demo", "--out", str(tmp_path), "--m", "12", "--moves", "2"]) == 0
    _, q = read_csv(tmp_path / "quality.csv")
    assert q.shape[0] == 3
    assert (tmp_path / "mesh_2.vtk").exists()


def test_bench_coarse_smoke(tmp_path):
    out = tmp_path / "b"
    assert main(["bench", "tension", "--coarse", "--steps", "3", "--out", str(out)]) == 0
    _, rows = read_csv(out / "load_deflection.csv")
    assert rows.shape[0] == 3
    for name in ("quality.csv", "resolved_config.ini", "newton_step3.csv", "mesh_0.vtk",
                 "mesh_3.vtk"):
        assert (out / name).exists()
