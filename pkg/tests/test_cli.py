"""Command line behavior: subcommands, exit codes, file formats."""

import json
import math
import subprocess
import sys

import pytest

from enershape import cli, model

from conftest import CURL3_TEXT


def run(capsys, *argv):
    code = cli.main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture()
def pendulum_file(tmp_path):
    path = tmp_path / "pendulum.toml"
    path.write_text(cli.builtin_model_text("double-pendulum"))
    return str(path)


class TestBuiltin:
    def test_prints_a_loadable_model(self, capsys):
        code, out, err = run(capsys, "builtin", "double-pendulum")
        assert code == 0
        assert err == ""
        spec = model.parse_model_text(out)
        assert spec.n == 2
        assert spec.constants["A"] == 2.0
        assert spec.constants["g"] == 3.0

    def test_out_writes_file(self, capsys, tmp_path):
        target = tmp_path / "model.toml"
        code, out, _ = run(capsys, "builtin", "double-pendulum", "--out", str(target))
        assert code == 0
        assert out == ""
        assert "[mass_inverse]" in target.read_text()

    def test_physical_constants(self, capsys):
        code, out, _ = run(
            capsys, "builtin", "double-pendulum", "--physical", "1", "1", "1", "1"
        )
        assert code == 0
        spec = model.parse_model_text(out)
        assert spec.constants["A"] == 2.0
        assert spec.constants["B"] == 1.0
        assert spec.constants["C"] == 1.0
        assert spec.constants["D1"] == pytest.approx(9.8)
        assert spec.constants["D2"] == pytest.approx(19.6)
        # the alignment slope is a chart choice, not a physical constant
        assert spec.constants["g"] == 3.0

    def test_physical_with_gravity(self, capsys):
        code, out, _ = run(
            capsys,
            "builtin",
            "double-pendulum",
            "--physical", "2", "1", "1", "0.5",
            "--gravity", "10",
        )
        assert code == 0
        spec = model.parse_model_text(out)
        assert spec.constants["A"] == pytest.approx(1.0 * 4.0 + 0.5 * 1.0)
        assert spec.constants["B"] == pytest.approx(0.5 * 2.0 * 1.0)
        assert spec.constants["D1"] == pytest.approx(0.5 * 10.0 * 1.0)
        assert spec.constants["D2"] == pytest.approx(1.5 * 10.0 * 2.0)

    def test_unknown_name(self, capsys):
        code, _, err = run(capsys, "builtin", "pendulum")
        assert code == 1
        assert "error:" in err
        assert "unknown builtin" in err


class TestSynth:
    def test_passing_model_reports_and_exits_zero(self, capsys, pendulum_file):
        code, out, err = run(capsys, "synth", pendulum_file)
        assert code == 0
        report = json.loads(out)
        assert report["schema"] == 1
        assert report["model"]["n"] == 2
        assert report["model"]["m"] == 1
        assert report["model"]["coords"] == ["x", "y"]
        assert report["chart"]["applied"] is True
        assert report["chart"]["centered"] is False
        assert report["chart"]["permutation"] == [0, 1]
        assert report["kinetic"]["mode"] == "solved"
        assert report["kinetic"]["xi"] == "1"
        assert report["integrability"]["residual"] == 0.0
        cert = report["certificate"]
        assert cert["verdict"] == "pass"
        assert cert["reason"] == "ok"
        assert cert["varpi"] == 2.0
        assert cert["m_block"]["data"][0][0] == pytest.approx(1.0, abs=1e-6)
        assert cert["varpi_min"] == pytest.approx(0.0, abs=1e-8)
        assert report["diagnostics"]["points"] == 20
        assert report["diagnostics"]["kinetic_residual_max"] < 1e-4
        assert report["diagnostics"]["potential_residual_max"] < 1e-4
        assert "gamma_check" not in report
        assert report["timings"]["total_s"] >= 0.0

    def test_failing_verdict_exits_two(self, capsys, pendulum_file):
        code, out, _ = run(capsys, "synth", pendulum_file, "--const", "g=1")
        assert code == 2
        report = json.loads(out)
        assert report["certificate"]["verdict"] == "fail"
        assert report["certificate"]["reason"] == "M not positive-definite"
        assert report["certificate"]["varpi_min"] is None
        assert report["model"]["constants"]["g"] == 1.0

    def test_gamma_check_block(self, capsys, pendulum_file):
        code, out, _ = run(capsys, "synth", pendulum_file, "--gamma-check")
        assert code == 0
        report = json.loads(out)
        assert report["gamma_check"]["m_positive"] is True
        code, out, _ = run(
            capsys, "synth", pendulum_file, "--gamma-check", "--const", "g=1"
        )
        assert code == 2
        report = json.loads(out)
        assert report["gamma_check"]["m_positive"] is False
        assert report["gamma_check"]["lambda_min"] == pytest.approx(-1.0, abs=1e-6)

    def test_explicit_varpi(self, capsys, pendulum_file):
        code, out, _ = run(capsys, "synth", pendulum_file, "--varpi", "0.5")
        assert code == 0
        assert json.loads(out)["certificate"]["varpi"] == 0.5

    def test_out_file(self, capsys, tmp_path, pendulum_file):
        target = tmp_path / "report.json"
        code, out, _ = run(capsys, "synth", pendulum_file, "--out", str(target))
        assert code == 0
        assert out == ""
        assert json.loads(target.read_text())["schema"] == 1

    def test_missing_file(self, capsys, tmp_path):
        code, _, err = run(capsys, "synth", str(tmp_path / "absent.toml"))
        assert code == 1
        assert "error:" in err

    def test_malformed_model(self, capsys, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("[model\nn = 2\n")
        code, _, err = run(capsys, "synth", str(bad))
        assert code == 1
        assert "error: load:" in err

    def test_bad_const_syntax(self, capsys, pendulum_file):
        code, _, err = run(capsys, "synth", pendulum_file, "--const", "g")
        assert code == 1
        assert "NAME=VALUE" in err
        code, _, err = run(capsys, "synth", pendulum_file, "--const", "g=abc")
        assert code == 1
        assert "not a number" in err

    def test_usage_errors_exit_one(self, capsys):
        assert run(capsys, )[0] == 1
        assert run(capsys, "synth")[0] == 1
        assert run(capsys, "frobnicate", "x")[0] == 1


class TestKineticFrom:
    def test_supplied_profile(self, capsys, tmp_path, pendulum_file):
        kfile = tmp_path / "kin.toml"
        kfile.write_text('[kinetic]\nK11 = "1"\n')
        code, out, _ = run(
            capsys, "synth", pendulum_file, "--kinetic-from", str(kfile)
        )
        assert code == 0
        report = json.loads(out)
        assert report["kinetic"]["mode"] == "supplied"
        # constant K is not a transport solution, the residual says so
        assert report["diagnostics"]["kinetic_residual_max"] > 1e-3

    def test_missing_table(self, capsys, tmp_path, pendulum_file):
        kfile = tmp_path / "kin.toml"
        kfile.write_text('[other]\nK11 = "1"\n')
        code, _, err = run(
            capsys, "synth", pendulum_file, "--kinetic-from", str(kfile)
        )
        assert code == 1
        assert "kinetic" in err

    def test_integrability_gate_trips(self, capsys, tmp_path):
        mfile = tmp_path / "curl.toml"
        mfile.write_text(CURL3_TEXT)
        kfile = tmp_path / "kin.toml"
        kfile.write_text('[kinetic]\nK11 = "1"\nK12 = "0"\nK22 = "2"\n')
        code, _, err = run(capsys, "synth", str(mfile), "--kinetic-from", str(kfile))
        assert code == 1
        assert "integrability" in err

    def test_gate_tolerance_override_reaches_certificate(self, capsys, tmp_path):
        mfile = tmp_path / "curl.toml"
        mfile.write_text(CURL3_TEXT)
        kfile = tmp_path / "kin.toml"
        kfile.write_text('[kinetic]\nK11 = "1"\nK12 = "0"\nK22 = "2"\n')
        code, out, _ = run(
            capsys,
            "synth", str(mfile),
            "--kinetic-from", str(kfile),
            "--tol", "2.0",
        )
        assert code == 2
        assert json.loads(out)["certificate"]["verdict"] == "fail"


class TestGrid:
    def test_default_grid_shape(self, capsys, pendulum_file):
        code, out, err = run(capsys, "grid", pendulum_file)
        assert code == 0
        assert err == ""
        lines = out.strip().splitlines()
        assert lines[0] == "q1,q2,hhat,u1,K"
        assert len(lines) == 1 + 81
        first = lines[1].split(",")
        assert float(first[0]) == -0.1
        assert float(first[1]) == -0.1
        last = lines[-1].split(",")
        assert float(last[0]) == 0.1
        assert float(last[1]) == 0.1

    def test_rows_are_lexicographic(self, capsys, pendulum_file):
        _, out, _ = run(capsys, "grid", pendulum_file, "--steps", "3")
        rows = [line.split(",") for line in out.strip().splitlines()[1:]]
        points = [(float(r[0]), float(r[1])) for r in rows]
        assert points == sorted(points)

    def test_origin_row_values(self, capsys, pendulum_file):
        _, out, _ = run(capsys, "grid", pendulum_file, "--steps", "3")
        for line in out.strip().splitlines()[1:]:
            parts = [float(v) for v in line.split(",")]
            if parts[0] == 0.0 and parts[1] == 0.0:
                assert parts[2] == pytest.approx(0.0, abs=1e-12)  # hhat
                assert parts[3] == pytest.approx(0.0, abs=1e-12)  # u1
                assert parts[4] == pytest.approx(1.0, abs=1e-12)  # K
                break
        else:
            pytest.fail("no origin row in grid output")

    def test_singular_rows_become_nan_with_warning(self, capsys, pendulum_file):
        code, out, err = run(
            capsys, "grid", pendulum_file, "--box", "0.2", "--steps", "5"
        )
        assert code == 0
        lines = out.strip().splitlines()
        nan_rows = [l for l in lines[1:] if "nan" in l]
        assert len(nan_rows) == 4
        assert "4 of 25 rows outside the validity domain" in err
        for row in nan_rows:
            q1, q2 = (float(v) for v in row.split(",")[:2])
            assert abs(4.0 * q1 - q2) > math.acos(2.0 / 3.0)

    def test_three_dof_header_lists_matrix_entries(self, capsys, tmp_path):
        mfile = tmp_path / "flat3.toml"
        from conftest import FLAT3_TEXT

        mfile.write_text(FLAT3_TEXT)
        kfile = tmp_path / "kin.toml"
        kfile.write_text('[kinetic]\nK11 = "1"\nK12 = "0"\nK22 = "1"\n')
        code, out, _ = run(
            capsys,
            "grid", str(mfile),
            "--kinetic-from", str(kfile),
            "--steps", "3",
        )
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "q1,q2,q3,hhat,u1,u2,K11,K12,K22"
        assert len(lines) == 1 + 27

    def test_out_file(self, capsys, tmp_path, pendulum_file):
        target = tmp_path / "grid.csv"
        code, out, _ = run(capsys, "grid", pendulum_file, "--out", str(target))
        assert code == 0
        assert out == ""
        assert target.read_text().startswith("q1,q2,hhat,u1,K")


class TestConsoleScript:
    def test_installed_entry_point(self, tmp_path):
        out = subprocess.run(
            [sys.executable, "-m", "enershape.cli", "builtin", "double-pendulum"],
            capture_output=True,
            text=True,
        )
        assert out.returncode == 0
        assert "[model]" in out.stdout
