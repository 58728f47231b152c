"""Tests for the command-line interface."""

import json
import re
import tempfile
from pathlib import Path

import pytest
import yaml
from typer.testing import CliRunner

from agca_multigrid.cli import EXIT_NOT_CONVERGED, app

runner = CliRunner()


@pytest.fixture
def temp_dir():
    """Create a temporary directory for tests."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


def write_config(directory: Path, **sections) -> Path:
    """Write a small run configuration and return its path."""
    data = {
        "mesh": {"nx": 2, "ny": 2, "levels": 2},
        "problem": {"family": 1, "dynamic_ratio": 100.0},
        "output": {"directory": str(directory / "out"), "record_timings": False},
    }
    for section, values in sections.items():
        data.setdefault(section, {}).update(values)
    path = directory / "agca.yaml"
    path.write_text(yaml.safe_dump(data))
    return path


class TestInit:
    """Tests for the init command."""

    def test_creates_config(self, temp_dir):
        """Test that init writes a loadable file once."""
        path = temp_dir / "agca.yaml"
        result = runner.invoke(app, ["init", "--config", str(path)])
        assert result.exit_code == 0
        assert path.exists()
        assert "Initialized" in result.output

        again = runner.invoke(app, ["init", "--config", str(path)])
        assert again.exit_code == 1


class TestSolve:
    """Tests for the solve command."""

    def test_stokes(self, temp_dir):
        """Test a converged solve with its artifacts."""
        config = write_config(temp_dir)
        result = runner.invoke(app, ["solve", "--config", str(config)])
        assert result.exit_code == 0, result.output
        out = temp_dir / "out"
        report = json.loads((out / "report.json").read_text())
        assert report["converged"] is True
        assert report["memory"]["n_dofs"] == 2 * 81 + 25
        assert (out / "residuals.csv").exists()
        assert (out / "effective-config.yaml").exists()

    def test_poisson_with_solution_dump(self, temp_dir):
        """Test the scalar solve path."""
        config = write_config(temp_dir, problem={"family": "poisson"})
        result = runner.invoke(app, ["solve", "--config", str(config)])
        assert result.exit_code == 0, result.output
        assert (temp_dir / "out" / "report.json").exists()

    def test_write_solution(self, temp_dir):
        """Test velocity and pressure dumps on request."""
        config = write_config(temp_dir, output={"write_solution": True})
        result = runner.invoke(app, ["solve", "--config", str(config)])
        assert result.exit_code == 0, result.output
        assert (temp_dir / "out" / "velocity.csv").exists()
        assert (temp_dir / "out" / "pressure.csv").exists()

    def test_invalid_tolerance(self, temp_dir):
        """Test that tol = 2.0 exits with 1 and a validation message."""
        config = write_config(temp_dir, solver={"krylov": {"tol": 2.0}})
        result = runner.invoke(app, ["solve", "--config", str(config)])
        assert result.exit_code == 1
        assert "Invalid" in result.output

    def test_missing_config(self, temp_dir):
        """Test that a missing file exits with 1."""
        result = runner.invoke(app, ["solve", "--config", str(temp_dir / "none.yaml")])
        assert result.exit_code == 1

    def test_capped(self, temp_dir):
        """Test exit code 2 and converged = false when the cap is hit."""
        config = write_config(
            temp_dir,
            problem={"family": 2, "dynamic_ratio": 1.0e8},
            coarsening={"mode": "dca"},
        )
        result = runner.invoke(app, ["solve", "--config", str(config), "--cap", "1"])
        assert result.exit_code == EXIT_NOT_CONVERGED
        report = json.loads((temp_dir / "out" / "report.json").read_text())
        assert report["converged"] is False

    def test_out_override(self, temp_dir):
        """Test that --out redirects the artifacts."""
        config = write_config(temp_dir)
        target = temp_dir / "elsewhere"
        result = runner.invoke(app, ["solve", "--config", str(config), "--out", str(target)])
        assert result.exit_code == 0, result.output
        assert (target / "report.json").exists()


class TestSweeps:
    """Tests for the sweep commands."""

    def test_sweep(self, temp_dir):
        """Test that the sweep writes one row per combination."""
        config = write_config(
            temp_dir,
            sweep={"dynamic_ratios": [1.0, 100.0], "coarsening_modes": ["agca"]},
        )
        result = runner.invoke(app, ["sweep", "--config", str(config), "--cap", "50"])
        assert result.exit_code == 0, result.output
        lines = (temp_dir / "out" / "sweep.csv").read_text().splitlines()
        assert len(lines) == 3

    def test_empty_sweep(self, temp_dir):
        """Test that an empty grid exits with 1."""
        config = write_config(temp_dir, sweep={"dynamic_ratios": []})
        result = runner.invoke(app, ["sweep", "--config", str(config)])
        assert result.exit_code == 1

    def test_nu_sweep(self, temp_dir):
        """Test the threshold sweep without solves."""
        config = write_config(temp_dir, nu_sweep={"nus": [1.0, 10.0], "solve": False})
        result = runner.invoke(app, ["nu-sweep", "--config", str(config)])
        assert result.exit_code == 0, result.output
        assert (temp_dir / "out" / "nu-sweep.csv").exists()

    def test_cagca(self, temp_dir):
        """Test the c_agca study."""
        config = write_config(
            temp_dir, problem={"family": 4}, cagca={"macro_sizes": [2, 4]}
        )
        result = runner.invoke(app, ["cagca", "--config", str(config), "--threads", "2"])
        assert result.exit_code == 0, result.output
        lines = (temp_dir / "out" / "cagca.csv").read_text().splitlines()
        assert len(lines) == 3


class TestMemoryModel:
    """Tests for the memory-model command."""

    def test_defaults(self):
        """Test that Mem_A is about 86.5 N_L."""
        result = runner.invoke(app, ["memory-model"])
        assert result.exit_code == 0
        value = float(re.search(r"Mem_A = ([0-9.]+) N_L", result.output).group(1))
        assert value == pytest.approx(86.5, abs=0.2)

    def test_invalid(self):
        """Test that c_agca > 1 exits with 1."""
        result = runner.invoke(app, ["memory-model", "--c-agca", "2"])
        assert result.exit_code == 1


class TestSelftest:
    """Tests for the selftest command."""

    def test_all_checks_pass(self):
        """Test exit code 0 on a pristine build."""
        result = runner.invoke(app, ["selftest"])
        assert result.exit_code == 0, result.output


class TestReport:
    """Tests for the report command."""

    def test_missing_directory(self, temp_dir):
        """Test that a missing output directory exits with 1."""
        result = runner.invoke(app, ["report", "--out", str(temp_dir / "none")])
        assert result.exit_code == 1

    def test_empty_directory(self, temp_dir):
        """Test that an empty directory is not an error."""
        result = runner.invoke(app, ["report", "--out", str(temp_dir)])
        assert result.exit_code == 0
        assert "No result files" in result.output

    def test_after_solve(self, temp_dir):
        """Test that a solve directory yields the residual plot."""
        config = write_config(temp_dir)
        runner.invoke(app, ["solve", "--config", str(config)])
        result = runner.invoke(app, ["report", "--out", str(temp_dir / "out")])
        assert result.exit_code == 0
        assert (temp_dir / "out" / "residuals.png").exists()


class TestDumps:
    """Tests for dump-mesh and dump-plan."""

    def test_dump_mesh(self, temp_dir):
        """Test the level-0 listing of a 1x1 macro grid."""
        config = write_config(temp_dir, mesh={"nx": 1, "ny": 1, "levels": 1})
        result = runner.invoke(app, ["dump-mesh", "--config", str(config), "--level", "0"])
        assert result.exit_code == 0
        assert result.output.splitlines()[0] == "# level 0: 4 vertices, 2 elements"

    def test_dump_mesh_invalid_level(self, temp_dir):
        """Test that a level above L exits with 1."""
        config = write_config(temp_dir)
        result = runner.invoke(app, ["dump-mesh", "--config", str(config), "--level", "5"])
        assert result.exit_code == 1

    def test_dump_plan(self, temp_dir):
        """Test the plan listing with stored matrix counts."""
        config = write_config(temp_dir, coarsening={"mode": "gca"})
        result = runner.invoke(app, ["dump-plan", "--config", str(config), "--store"])
        assert result.exit_code == 0, result.output
        data = yaml.safe_load(result.output)
        assert data["c_agca"] == 1.0
        assert data["stored_matrices"] == {0: 8, 1: 32}
