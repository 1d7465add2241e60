from __future__ import annotations

import json

import pytest

from eqst import io
from eqst.cli import run
from eqst.config import bundled_path
from eqst.studies import observed_order

from support import coax_power

JOINT_COARSE = ["--config", "joint_like", "--h", "20 mm", "--dt-el", "0.1 ms", "--dt-th", "0.5 ms"]


def _bad_config(tmp_path, old, new, name="bad.toml"):
    text = bundled_path("coaxial").read_text()
    assert old in text
    path = tmp_path / name
    path.write_text(text.replace(old, new))
    return str(path)


def test_forward_coaxial(tmp_path):
    out = tmp_path / "fwd"
    assert run(["forward", "--config", "coaxial", "--out", str(out), "--vtk"]) == 0
    rows = io.read_csv(out / "qoi.csv")
    assert rows[0] == ["qoi", "kind", "value", "unit"]
    assert rows[1][:2] == ["G_joule", "joule_heat"] and rows[1][3] == "J"
    assert float(rows[1][2]) == pytest.approx(coax_power() * 1.0, rel=1e-2)
    ts = io.read_csv(out / "timeseries.csv")
    assert ts[0] == ["t", "joule_power_W"] and len(ts) == 12
    assert (out / "qoi.csv").read_bytes().count(b"\r\n") == 2
    assert sorted(p.name for p in out.glob("*.vtk")) == ["state_00000.vtk", "state_00010.vtk"]


def test_manifest(tmp_path):
    out = tmp_path / "m"
    assert run(["avm", "--config", "coaxial", "--h", "4mm", "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    for key in ("command", "config", "config_sha256", "argv", "mesh", "time_grid", "tolerances",
                "threads", "timings", "numpy", "scipy", "python", "solver_stats"):
        assert key in man
    assert man["command"] == "avm" and man["threads"] == 1
    assert man["time_grid"]["n_el"] == 10 and man["time_grid"]["n_th"] == 2
    assert man["tolerances"]["tol_newton"] == 1e-10
    assert man["mesh"]["max_edge_length"] <= 4e-3 * 2**0.5 + 1e-12
    rows = io.read_csv(out / "sensitivities.csv")
    assert rows[0][:4] == ["qoi", "parameter", "method", "value"]
    assert rows[1][:3] == ["G_joule", "insulation.sigma.value", "AVM"]
    assert float(rows[1][5]) == pytest.approx(1.0, rel=1e-8)


def test_deterministic_output(tmp_path):
    for k in (1, 2):
        assert run(["fd-check", *JOINT_COARSE, "--param", "fgm.sigma.p2", "--out", str(tmp_path / f"r{k}")]) == 0
    for name in ("qoi.csv", "timeseries.csv", "sensitivities.csv"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()


def test_configuration_errors_exit_2(tmp_path, capsys):
    bad = _bad_config(tmp_path, 'sigma = "1e-12 S/m"', 'sigma = "1e-12 kg"')
    assert run(["forward", "--config", bad, "--out", str(tmp_path / "a")]) == 2
    err = capsys.readouterr().err
    assert "bad.toml" in err and "materials.insulation.sigma" in err
    assert run(["forward", "--config", str(tmp_path / "missing.toml"), "--out", str(tmp_path / "b")]) == 2
    assert run(["forward", "--config", "coaxial", "--qoi", "nope", "--out", str(tmp_path / "c")]) == 2
    assert run(["avm", "--config", "coaxial", "--param", "insulation.sigma.p7",
                "--out", str(tmp_path / "d")]) == 2
    assert run(["forward", "--config", "coaxial", "--threads", "0", "--out", str(tmp_path / "e")]) == 2
    assert run(["convergence", "--config", "coaxial", "--values", "4mm,2mm",
                "--out", str(tmp_path / "f")]) == 2
    with pytest.raises(SystemExit) as exc:
        run(["forward", "--config", "coaxial", "--h", "4 kg"])
    assert exc.value.code == 2


def test_solver_failure_exit_3(tmp_path, capsys):
    text = bundled_path("joint_like").read_text().replace("[time]", "[solver]\nmax_newton = 1\n\n[time]")
    cfg = tmp_path / "strict.toml"
    cfg.write_text(text)
    assert run(["forward", "--config", str(cfg), "--h", "20mm", "--out", str(tmp_path / "o")]) == 3
    assert "Newton did not converge" in capsys.readouterr().err


def test_sweep_linear_tangent(tmp_path):
    out = tmp_path / "sw"
    assert run(["sweep", "--config", "coaxial", "--h", "4mm", "--out", str(out)]) == 0
    rows = io.read_csv(out / "sweep.csv")
    assert rows[0] == ["p_over_p0", "p", "G", "G_over_G0", "tangent"]
    assert len(rows) == 6
    # G is linear in sigma, so the tangent is the curve itself
    for r in rows[1:]:
        assert float(r[4]) == pytest.approx(float(r[3]), rel=1e-9)


def test_convergence_cli(tmp_path):
    out = tmp_path / "cv"
    assert run(["convergence", "--config", "coaxial", "--axis", "dt_thermal_ratio", "--values", "1,2,5",
                "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert [lv["thermal_solves"] for lv in man["levels"]] == [10, 5, 2]
    rows = io.read_csv(out / "convergence.csv")
    assert rows[0][0] == "axis" and rows[-2][1] == "reference"


def test_observed_order():
    assert observed_order([1, 2, 4], [1, 4, 16]) == pytest.approx(2.0)
    assert observed_order([1, 2, 4], [0, 0, 1]) is None
    assert observed_order([0.5, 1.0], [0.0, 0.0]) is None


def test_vtk_field_length(tmp_path):
    from eqst.config import bundled
    mesh = bundled("coaxial").with_overrides(h=0.01).scenario.mesh
    with pytest.raises(ValueError, match="expected"):
        io.write_vtk(tmp_path / "x.vtk", mesh, point_data={"u": [0.0]})
    path = io.write_vtk(tmp_path / "y.vtk", mesh, point_data={"u": [0.0] * mesh.n_nodes})
    assert f"POINT_DATA {mesh.n_nodes}" in path.read_text()


def test_csv_round_trip(tmp_path):
    path = io.write_csv(tmp_path / "r.csv", [["a", "b,c"], [0.1, 3]])
    assert path.read_bytes() == b'a,"b,c"\r\n0.1,3\r\n'
    assert io.read_csv(path) == [["a", "b,c"], ["0.1", "3"]]
