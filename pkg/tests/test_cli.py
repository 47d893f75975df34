"""End-to-end tests of the command-line driver, run in process."""

import csv
import hashlib
import os

import numpy as np
import pytest

from qgfv.cases import init_circular_flow
from qgfv.cli import main
from qgfv.elliptic import PhysicalParams
from qgfv.errors import MeshGenerationError
from qgfv.mesh import load_mesh


def _gen_quad(tmp_path, nx=8, ny=8, lx="1.0", ly="1.0", name="grid.qgmesh"):
    path = tmp_path / name
    rc = main(["mesh", "gen", "--quad", str(nx), str(ny), lx, ly,
               "-o", str(path)])
    assert rc == 0
    return path


def _write_config(tmp_path, text, name="case.cfg"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def _read_field_csv(path):
    with open(path, encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["cell_id", "x", "y", "value"]
    ids = np.array([int(r[0]) for r in rows[1:]])
    values = np.array([float(r[3]) for r in rows[1:]])
    return ids, values


def _manifest_fields(path):
    fields = {}
    with open(path, encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    assert lines[0] == "qgfv manifest 1"
    for line in lines[1:]:
        if line == "--- config ---":
            break
        key, _, value = line.partition(": ")
        fields[key] = value
    start = lines.index("--- config ---")
    end = lines.index("--- end config ---")
    fields["_config"] = "\n".join(lines[start + 1:end])
    return fields


class TestMeshGen:

    def test_quad_gen_and_validate(self, tmp_path, capsys):
        path = _gen_quad(tmp_path, 4, 4)
        out = capsys.readouterr().out
        assert f"wrote {path}: 25 cells, 16 vertices, 40 edges" in out
        assert main(["mesh", "validate", str(path)]) == 0
        assert "accepted: True" in capsys.readouterr().out

    def test_gen_needs_exactly_one_source(self, tmp_path, capsys):
        out = str(tmp_path / "m.qgmesh")
        with pytest.raises(SystemExit) as err:
            main(["mesh", "gen", "-o", out])
        assert err.value.code == 3
        with pytest.raises(SystemExit) as err:
            main(["mesh", "gen", "--quad", "4", "4", "1", "1",
                  "--cvt", "p.txt", "16", "10", "1", "-o", out])
        assert err.value.code == 3
        assert "exactly one of --quad or --cvt" in capsys.readouterr().err

    def test_gen_bad_integer(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as err:
            main(["mesh", "gen", "--quad", "four", "4", "1", "1",
                  "-o", str(tmp_path / "m.qgmesh")])
        assert err.value.code == 3
        assert "NX must be an integer, got 'four'" in capsys.readouterr().err

    def test_gen_bad_float(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as err:
            main(["mesh", "gen", "--quad", "4", "4", "wide", "1",
                  "-o", str(tmp_path / "m.qgmesh")])
        assert err.value.code == 3
        assert "LX must be a number" in capsys.readouterr().err

    def test_gen_degenerate_quad(self, tmp_path, capsys):
        rc = main(["mesh", "gen", "--quad", "1", "4", "1", "1",
                   "-o", str(tmp_path / "m.qgmesh")])
        assert rc == 3
        assert "qgfv mesh gen:" in capsys.readouterr().err

    def test_missing_output_flag(self, capsys):
        with pytest.raises(SystemExit) as err:
            main(["mesh", "gen", "--quad", "4", "4", "1", "1"])
        assert err.value.code == 3

    def test_cvt_gen_from_polygon(self, tmp_path, capsys):
        poly = tmp_path / "poly.txt"
        poly.write_text("# unit square\n0 0\n1 0\n\n1 1\n0 1\n",
                        encoding="utf-8")
        path = tmp_path / "cvt.qgmesh"
        rc = main(["mesh", "gen", "--cvt", str(poly), "16", "10", "1",
                   "-o", str(path)])
        assert rc == 0
        assert load_mesh(path).n_cells == 16
        assert main(["mesh", "validate", str(path)]) == 0

    def test_cvt_too_few_generators(self, tmp_path, capsys):
        poly = tmp_path / "poly.txt"
        poly.write_text("0 0\n1 0\n1 1\n0 1\n", encoding="utf-8")
        rc = main(["mesh", "gen", "--cvt", str(poly), "9", "10", "1",
                   "-o", str(tmp_path / "m.qgmesh")])
        assert rc == 3

    def test_cvt_generation_failure(self, tmp_path, capsys, monkeypatch):
        import qgfv.cli
        def explode(*args):
            raise MeshGenerationError("degenerate Voronoi region")
        monkeypatch.setattr(qgfv.cli, "build_cvt_mesh", explode)
        poly = tmp_path / "poly.txt"
        poly.write_text("0 0\n1 0\n1 1\n0 1\n", encoding="utf-8")
        rc = main(["mesh", "gen", "--cvt", str(poly), "16", "10", "1",
                   "-o", str(tmp_path / "m.qgmesh")])
        assert rc == 1
        assert "degenerate Voronoi region" in capsys.readouterr().err

    @pytest.mark.parametrize("body,fragment", [
        ("0 0\n1 0\n", "at least 3 vertices"),
        ("0 0\n1 zero\n1 1\n", "bad coordinate"),
        ("0 0\n1 0 0\n1 1\n", "expected 'x y'"),
    ])
    def test_bad_polygon_file(self, tmp_path, capsys, body, fragment):
        poly = tmp_path / "poly.txt"
        poly.write_text(body, encoding="utf-8")
        rc = main(["mesh", "gen", "--cvt", str(poly), "16", "10", "1",
                   "-o", str(tmp_path / "m.qgmesh")])
        assert rc == 2
        assert fragment in capsys.readouterr().err


class TestMeshValidate:

    def test_missing_file(self, tmp_path, capsys):
        rc = main(["mesh", "validate", str(tmp_path / "absent.qgmesh")])
        assert rc == 2
        assert "I/O error" in capsys.readouterr().err

    def test_truncated_file(self, tmp_path, capsys):
        path = tmp_path / "short.qgmesh"
        path.write_text("qgmesh 1\ncells 16\n", encoding="utf-8")
        rc = main(["mesh", "validate", str(path)])
        assert rc == 2

    def test_tampered_area_is_rejected(self, tmp_path, capsys):
        path = _gen_quad(tmp_path, 3, 3)
        lines = path.read_text(encoding="utf-8").splitlines()
        row = lines.index("# id x y area class") + 1
        tokens = lines[row].split()
        tokens[3] = "0.9"
        lines[row] = " ".join(tokens)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        capsys.readouterr()
        rc = main(["mesh", "validate", str(path)])
        assert rc == 1
        assert "accepted: False" in capsys.readouterr().out


CIRCULAR_CFG = """\
case = circular
scheme = ivfv1
mesh.quad = 12, 12, 1.0, 1.0
f0 = 1
beta = 0
g = 1
H = 1
dt = 0.001
steps = 10
output_every = 5
"""


class TestRun:

    def test_circular_run_outputs(self, tmp_path, capsys):
        config = _write_config(tmp_path, CIRCULAR_CFG)
        out = tmp_path / "out"
        rc = main(["run", config, "--out", str(out)])
        assert rc == 0
        assert "run complete: 10 steps" in capsys.readouterr().out

        expected = {"psi_000000.csv", "q_000000.csv", "psi_000005.csv",
                    "q_000005.csv", "psi_000010.csv", "q_000010.csv",
                    "diagnostics.csv", "manifest.txt", "mesh.qgmesh"}
        assert set(os.listdir(out)) == expected

        mesh = load_mesh(out / "mesh.qgmesh")
        assert mesh.n_cells == 13 * 13
        ids, q_values = _read_field_csv(out / "q_000000.csv")
        assert np.array_equal(ids, np.arange(1, mesh.n_cells + 1))
        params = PhysicalParams(f0=1.0, beta=0.0, g=1.0, H=1.0)
        assert np.array_equal(q_values, init_circular_flow(mesh, params)[1])

        fields = _manifest_fields(out / "manifest.txt")
        digest = hashlib.sha256((out / "mesh.qgmesh").read_bytes())
        assert fields["mesh_sha256"] == digest.hexdigest()
        assert fields["command"] == "run"
        assert fields["case"] == "circular"
        assert fields["scheme"] == "ivfv1"
        assert fields["dt"] == "0.001"
        assert fields["steps"] == "10"
        assert fields["output_every"] == "5"
        assert fields["sim_start"] == "0"
        assert np.isclose(float(fields["sim_end"]), 0.01, rtol=1e-12)
        assert fields["status"] == "ok"
        assert fields["outputs"].split(" ") == sorted(expected - {
            "manifest.txt", "mesh.qgmesh"})
        assert fields["_config"] == CIRCULAR_CFG.rstrip("\n")
        assert not os.path.exists(out / "manifest.txt.tmp")

        with open(out / "diagnostics.csv", encoding="utf-8") as handle:
            rows = list(csv.reader(handle))
        assert rows[0][0] == "time" and len(rows) == 4
        total_pv = np.array([float(r[1]) for r in rows[1:]])
        pv_scale = max(abs(float(r[3])) for r in rows[1:])
        assert np.abs(total_pv - total_pv[0]).max() <= 1e-11 * pv_scale

    def test_run_is_deterministic(self, tmp_path):
        config = _write_config(tmp_path, CIRCULAR_CFG)
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert main(["run", config, "--out", str(out_a)]) == 0
        assert main(["run", config, "--out", str(out_b)]) == 0
        for name in sorted(os.listdir(out_a)):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_rest_state_stays_at_rest(self, tmp_path):
        config = _write_config(tmp_path, """\
case = wind_basin
scheme = vsfv2
mesh.quad = 8, 8, 1.0, 1.0
tau0 = 0
steps = 3
""")
        out = tmp_path / "out"
        assert main(["run", config, "--out", str(out)]) == 0
        for tag in ("000000", "000003"):
            _, psi = _read_field_csv(out / f"psi_{tag}.csv")
            assert not psi.any()

    def test_run_streamfunction_scheme(self, tmp_path):
        config = _write_config(tmp_path, """\
case = wind_basin
scheme = vsfv1
mesh.quad = 4, 4, 3.336e6, 3.336e6
steps = 2
""")
        out = tmp_path / "out"
        assert main(["run", config, "--out", str(out)]) == 0
        _, q = _read_field_csv(out / "q_000002.csv")
        assert np.isfinite(q).all()

    def test_run_with_mesh_file_source(self, tmp_path):
        mesh_path = _gen_quad(tmp_path, 8, 8)
        config = _write_config(tmp_path, f"""\
case = circular
scheme = ivfv2
mesh_file = {mesh_path}
f0 = 1
beta = 0
g = 1
H = 1
dt = 0.001
steps = 1
""")
        out = tmp_path / "out"
        assert main(["run", config, "--out", str(out)]) == 0
        assert not os.path.exists(out / "mesh.qgmesh")
        fields = _manifest_fields(out / "manifest.txt")
        digest = hashlib.sha256(mesh_path.read_bytes()).hexdigest()
        assert fields["mesh_sha256"] == digest

    def test_run_missing_scheme(self, tmp_path, capsys):
        config = _write_config(
            tmp_path, "case = circular\nmesh.quad = 8,8,1,1\nsteps = 1\n")
        assert main(["run", config, "--out", str(tmp_path / "o")]) == 3
        assert "missing required key 'scheme'" in capsys.readouterr().err

    def test_run_missing_steps(self, tmp_path, capsys):
        config = _write_config(
            tmp_path,
            "case = circular\nscheme = ivfv1\nmesh.quad = 8,8,1,1\n")
        assert main(["run", config, "--out", str(tmp_path / "o")]) == 3
        assert "missing required key 'steps'" in capsys.readouterr().err

    def test_run_rejects_steady_case(self, tmp_path, capsys):
        config = _write_config(tmp_path, """\
case = steady_stommel
scheme = ivfv1
mesh.quad = 8, 8, 1, 1
steps = 1
""")
        assert main(["run", config, "--out", str(tmp_path / "o")]) == 3
        assert "use 'qgfv steady'" in capsys.readouterr().err

    def test_solver_failure_exit(self, tmp_path, capsys):
        config = _write_config(tmp_path, """\
case = circular
scheme = ivfv1
mesh.quad = 8, 8, 1, 1
f0 = 1
beta = 0
g = 1
H = 1
dt = 1e8
steps = 50
output_every = 50
""")
        out = tmp_path / "out"
        rc = main(["run", config, "--out", str(out)])
        assert rc == 4
        assert "solver failure at step" in capsys.readouterr().err
        fields = _manifest_fields(out / "manifest.txt")
        assert fields["status"].startswith("solver_failure at step ")
        # the initial snapshot and diagnostics row are still on disk
        assert os.path.exists(out / "psi_000000.csv")
        with open(out / "diagnostics.csv", encoding="utf-8") as handle:
            assert len(handle.read().splitlines()) == 2


class TestSteady:

    def test_steady_stommel(self, tmp_path, capsys):
        config = _write_config(tmp_path, """\
case = steady_stommel
mesh.quad = 24, 24, 3.336e6, 3.336e6
""")
        out = tmp_path / "out"
        rc = main(["steady", config, "--out", str(out)])
        assert rc == 0
        assert "steady solve complete (stommel)" in capsys.readouterr().out

        report = {}
        with open(out / "boundary_layer.txt", encoding="utf-8") as handle:
            for line in handle:
                key, _, value = line.partition(": ")
                report[key] = float(value)
        assert set(report) == {"west_max_gradient", "east_max_gradient",
                               "west_east_ratio", "west_efold_width",
                               "east_efold_width"}
        assert report["west_east_ratio"] > 5.0
        assert report["west_efold_width"] < report["east_efold_width"]

        _, psi = _read_field_csv(out / "psi_steady.csv")
        assert np.abs(psi).max() > 0.0
        fields = _manifest_fields(out / "manifest.txt")
        assert fields["command"] == "steady"
        assert fields["mode"] == "stommel"
        assert fields["outputs"] == "boundary_layer.txt psi_steady.csv"

    def test_steady_munk(self, tmp_path, capsys):
        config = _write_config(tmp_path, """\
case = steady_munk
mesh.quad = 12, 12, 3.336e6, 3.336e6
mu = 5e5
""")
        out = tmp_path / "out"
        assert main(["steady", config, "--out", str(out)]) == 0
        fields = _manifest_fields(out / "manifest.txt")
        assert fields["mode"] == "munk"

    def test_steady_rejects_run_case(self, tmp_path, capsys):
        config = _write_config(
            tmp_path, "case = circular\nmesh.quad = 8,8,1,1\n")
        assert main(["steady", config, "--out", str(tmp_path / "o")]) == 3
        assert "steady_stommel or steady_munk" in capsys.readouterr().err


class TestLogging:

    def test_bogus_log_level_still_runs(self, tmp_path, monkeypatch):
        monkeypatch.setenv("QGFV_LOG", "chatty")
        _gen_quad(tmp_path, 4, 4)

    def test_debug_log_level(self, tmp_path, monkeypatch):
        monkeypatch.setenv("QGFV_LOG", "debug")
        _gen_quad(tmp_path, 4, 4)
