"""Tests for data models."""

import math

import pytest
from pydantic import ValidationError

from agca_multigrid.models import (
    CoarseningConfig,
    CoarseningMode,
    EvalMode,
    ExperimentResult,
    KrylovConfig,
    MeshConfig,
    ProblemConfig,
    RunConfig,
    SchurSign,
    SolveReport,
    SolverConfig,
    SweepGrid,
    VCycleConfig,
)


class TestMeshConfig:
    """Tests for MeshConfig model."""

    def test_defaults(self):
        """Test default mesh parameters."""
        mesh = MeshConfig()
        assert (mesh.nx, mesh.ny, mesh.levels) == (8, 8, 3)

    def test_zero_levels_rejected(self):
        """Test that L = 0 is rejected."""
        with pytest.raises(ValidationError, match="levels"):
            MeshConfig(levels=0)

    def test_nonpositive_counts_rejected(self):
        """Test that macro cell counts must be positive."""
        with pytest.raises(ValidationError):
            MeshConfig(nx=0)


class TestProblemConfig:
    """Tests for ProblemConfig model."""

    def test_viscosity_niveaus(self):
        """Test eta_high = sqrt(DR) and eta_low = 1/sqrt(DR)."""
        problem = ProblemConfig(dynamic_ratio=1.0e4)
        assert problem.eta_high == pytest.approx(100.0)
        assert problem.eta_low == pytest.approx(0.01)
        assert problem.eta_high / problem.eta_low == pytest.approx(1.0e4)

    def test_poisson_family(self):
        """Test the scalar validation problem is accepted."""
        problem = ProblemConfig(family="poisson")
        assert problem.is_poisson

    @pytest.mark.parametrize("family", [0, 7])
    def test_family_out_of_range(self, family):
        """Test that families outside 1..6 are rejected."""
        with pytest.raises(ValidationError):
            ProblemConfig(family=family)

    def test_dynamic_ratio_below_one(self):
        """Test that DR < 1 is rejected."""
        with pytest.raises(ValidationError):
            ProblemConfig(dynamic_ratio=0.5)

    def test_eval_mode_from_string(self):
        """Test enums parse from their values."""
        problem = ProblemConfig(eval_mode="mean_harmonic")
        assert problem.eval_mode is EvalMode.MEAN_HARMONIC
        assert problem.eval_mode.is_mean


class TestSolverConfig:
    """Tests for the solver configuration models."""

    @pytest.mark.parametrize("tol", [0.0, 1.0, 2.0])
    def test_tolerance_range(self, tol):
        """Test that the tolerance must lie in (0, 1)."""
        with pytest.raises(ValidationError, match="Tolerance"):
            KrylovConfig(tol=tol)

    def test_inner_tolerance_derived(self):
        """Test the derived Z-solve tolerance max(1e-6, tol/100)."""
        assert SolverConfig().inner_tolerance() == pytest.approx(1.0e-6)
        relaxed = SolverConfig(krylov=KrylovConfig(tol=1.0e-3))
        assert relaxed.inner_tolerance() == pytest.approx(1.0e-5)

    def test_inner_tolerance_explicit(self):
        """Test that an explicit z_tol wins."""
        assert SolverConfig(z_tol=1.0e-4).inner_tolerance() == 1.0e-4

    def test_cheby_order_range(self):
        """Test that the configured Chebyshev order is limited to 2..4."""
        with pytest.raises(ValidationError):
            VCycleConfig(cheby_order=5)

    def test_invalid_interval(self):
        """Test that the smoothing interval ratios must be ordered."""
        with pytest.raises(ValidationError, match="interval"):
            VCycleConfig(interval_lower=1.2, interval_upper=1.1)

    def test_schur_sign_factor(self):
        """Test the sign factors."""
        assert SchurSign.PLUS.factor == 1.0
        assert SchurSign.MINUS.factor == -1.0


class TestRunConfig:
    """Tests for RunConfig model."""

    def test_min_level_below_levels(self):
        """Test that the coarsest V-cycle level must lie below L."""
        with pytest.raises(ValidationError, match="min_level"):
            RunConfig(
                mesh=MeshConfig(levels=2),
                solver=SolverConfig(vcycle=VCycleConfig(min_level=2)),
            )

    def test_nu_accepts_infinity(self):
        """Test that nu = inf disables Galerkin coarsening."""
        assert math.isinf(CoarseningConfig(nu=math.inf).nu)

    def test_negative_nu_rejected(self):
        """Test that negative thresholds are rejected."""
        with pytest.raises(ValidationError):
            CoarseningConfig(nu=-1.0)


class TestSweepGrid:
    """Tests for SweepGrid model."""

    def test_combinations_order(self):
        """Test that combinations vary the last axis fastest."""
        grid = SweepGrid(
            dynamic_ratios=[1.0, 100.0],
            coarsening_modes=[CoarseningMode.DCA, CoarseningMode.AGCA],
        )
        combos = grid.combinations()
        assert len(combos) == 4
        assert combos[0][0] == 1.0 and combos[0][4] is CoarseningMode.DCA
        assert combos[1][0] == 1.0 and combos[1][4] is CoarseningMode.AGCA
        assert combos[2][0] == 100.0

    def test_empty_grid(self):
        """Test that an empty axis yields no combinations."""
        assert SweepGrid(dynamic_ratios=[]).combinations() == []


class TestSolveReport:
    """Tests for SolveReport model."""

    def test_relative_residuals(self):
        """Test the relative history divides by the rhs norm."""
        report = SolveReport(residuals=[2.0, 1.0, 0.5], rhs_norm=2.0)
        assert report.relative_residuals == [1.0, 0.5, 0.25]

    def test_zero_rhs(self):
        """Test the relative history is unscaled when b = 0."""
        report = SolveReport(residuals=[0.0], rhs_norm=0.0, converged=True)
        assert report.relative_residuals == [0.0]

    def test_empty_history_rejected(self):
        """Test that a report needs at least the initial residual."""
        with pytest.raises(ValidationError):
            SolveReport(residuals=[])


class TestExperimentResult:
    """Tests for ExperimentResult model."""

    def make(self, **kwargs):
        """Build a result with defaults."""
        values = dict(
            family=2,
            dynamic_ratio=1.0e6,
            omega=200.0,
            n_sinkers=1,
            eval_mode=EvalMode.ANALYTIC,
            coarsening_mode=CoarseningMode.AGCA,
            nu=10.0,
            macro_nx=8,
            levels=4,
            iterations=17,
            converged=True,
            c_agca=0.125,
            stored_bytes=1024,
            seconds=1.25,
        )
        values.update(kwargs)
        return ExperimentResult(**values)

    def test_csv_row_matches_fields(self):
        """Test the row follows CSV_FIELDS order."""
        row = self.make().csv_row()
        assert len(row) == len(ExperimentResult.CSV_FIELDS)
        assert row == [
            "2",
            "1e+06",
            "200",
            "1",
            "analytic",
            "agca",
            "10",
            "8",
            "4",
            "17",
            "true",
            "0.125000",
            "1024",
            "1.250",
        ]

    def test_csv_row_without_timings(self):
        """Test that timings can be zeroed for reproducible files."""
        assert self.make().csv_row(record_timings=False)[-1] == "0.000"

    def test_c_agca_range(self):
        """Test that c_agca must lie in [0, 1]."""
        with pytest.raises(ValidationError):
            self.make(c_agca=1.5)
