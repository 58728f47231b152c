"""Tests for DCA, distributed GCA and AGCA level operators."""

import math

import numpy as np
import pytest
import yaml
from scipy.sparse.linalg import norm as sparse_norm

from agca_multigrid.coarsening import (
    BuildOrderError,
    CoarseningPlan,
    GcaStore,
    OperatorError,
    OperatorKind,
    apply_level,
    assemble_sparse,
    build_agca_hierarchy,
    build_gca_level,
    build_gca_store,
    dump_plan,
    level_local_matrices,
    plan_for_mode,
    select_macros,
)
from agca_multigrid.fem import CoefficientEval, quadrature
from agca_multigrid.mesh import build_macro_grid, refine_hierarchy
from agca_multigrid.models import CoarseningMode, EvalMode, ProblemConfig
from agca_multigrid.problems import viscosity
from agca_multigrid.selftest import galerkin_error
from agca_multigrid.transfer import prolongation_matrix


def unit(x, y):
    """Return the constant viscosity 1."""
    return np.ones(np.broadcast(x, y).shape)


def evaluator(hierarchy, family, dynamic_ratio=1.0e4, mode=EvalMode.ANALYTIC):
    """Return the coefficient evaluator of a sinker family."""
    source = viscosity(ProblemConfig(family=family, dynamic_ratio=dynamic_ratio))
    return source, CoefficientEval(mode, source, hierarchy)


@pytest.fixture
def two_macros():
    """Create the 1x1 macro grid (two triangles) refined twice."""
    return refine_hierarchy(build_macro_grid(1, 1), 2)


@pytest.fixture
def grid8():
    """Create an 8x8 macro grid refined twice."""
    return refine_hierarchy(build_macro_grid(8, 8), 2)


class TestSelectMacros:
    """Tests for select_macros and plan_for_mode."""

    def test_constant_eta(self, grid8):
        """Test that a constant viscosity selects no macro."""
        plan = select_macros(unit, grid8, 0.0)
        assert plan.gca_macros == frozenset()
        assert plan.c_agca == 0.0

    def test_infinite_threshold(self, grid8):
        """Test that nu = inf gives a pure DCA plan."""
        source, _ = evaluator(grid8, 4)
        assert select_macros(source, grid8, math.inf).gca_macros == frozenset()

    def test_disk_interface(self, grid8):
        """Test that the GCA macros are those with finest elements straddling the disk."""
        source, _ = evaluator(grid8, 4)
        plan = select_macros(source, grid8, 10.0)

        coords = grid8.coordinates(2)
        inside = np.hypot(coords[:, 0] - 0.5, coords[:, 1] - 0.5) <= 0.1
        flags = inside[grid8.cells(2)]
        mixed = flags.any(axis=-1) & ~flags.all(axis=-1)
        expected = frozenset(int(m) for m in np.flatnonzero(mixed.any(axis=-1)))

        assert plan.gca_macros == expected
        assert 0 < len(expected) < grid8.n_macros
        assert plan.c_agca == pytest.approx(len(expected) / 128)

    def test_monotone_in_nu(self, grid8):
        """Test that the GCA set shrinks as nu grows."""
        source, _ = evaluator(grid8, 3)
        counts = [len(select_macros(source, grid8, nu).gca_macros) for nu in (0.1, 1, 10, 100)]
        assert counts == sorted(counts, reverse=True)

    def test_negative_threshold(self, grid8):
        """Test that nu < 0 is rejected."""
        with pytest.raises(ValueError):
            select_macros(unit, grid8, -1.0)

    def test_modes(self, grid8):
        """Test that dca and gca modes ignore the threshold."""
        source, _ = evaluator(grid8, 2)
        assert plan_for_mode(CoarseningMode.DCA, source, grid8, 0.0).c_agca == 0.0
        assert plan_for_mode(CoarseningMode.GCA, source, grid8, math.inf).c_agca == 1.0


class TestGcaStore:
    """Tests for the Galerkin element matrix store."""

    def test_build_order(self, two_macros):
        """Test that a level cannot be built before its finer source."""
        _, eta = evaluator(two_macros, 2)
        store = GcaStore(two_macros, OperatorKind.DIFFUSION, CoarseningPlan.full_gca(2))
        with pytest.raises(BuildOrderError):
            build_gca_level(store, eta, 0)
        with pytest.raises(BuildOrderError):
            store.level(0)

    def test_finest_level_not_stored(self, two_macros):
        """Test that level L is never a GCA level."""
        _, eta = evaluator(two_macros, 2)
        store = GcaStore(two_macros, OperatorKind.DIFFUSION, CoarseningPlan.full_gca(2))
        with pytest.raises(BuildOrderError):
            build_gca_level(store, eta, 2)

    @pytest.mark.parametrize("kind", list(OperatorKind))
    def test_stored_entries(self, grid8, kind):
        """Test the memory ledger: GCA micro elements over levels 0..L-1 times n**2."""
        source, eta = evaluator(grid8, 4)
        plan = select_macros(source, grid8, 10.0)
        store = build_gca_store(grid8, eta, kind, plan)
        elements = len(plan.gca_macros) * (1 + 4)
        assert store.stored_entries == elements * kind.n_local**2
        assert store.is_complete()

    def test_symmetric(self, two_macros):
        """Test that every stored matrix is symmetric."""
        _, eta = evaluator(two_macros, 2)
        store = build_gca_store(two_macros, eta, OperatorKind.VISCOUS, CoarseningPlan.full_gca(2))
        for level in range(2):
            mats = store.level(level)
            scale = np.abs(mats).max()
            assert np.abs(mats - np.swapaxes(mats, -1, -2)).max() <= 1e-13 * scale

    @pytest.mark.parametrize("kind", list(OperatorKind))
    def test_constant_eta_equals_dca(self, kind):
        """Test that GCA and DCA element matrices coincide for constant viscosity."""
        hierarchy = refine_hierarchy(build_macro_grid(2, 2), 3)
        eta = CoefficientEval(EvalMode.ANALYTIC, unit, hierarchy)
        plan = CoarseningPlan.full_gca(hierarchy.n_macros)
        store = build_gca_store(hierarchy, eta, kind, plan)
        for level in range(3):
            direct = level_local_matrices(
                hierarchy, eta, kind, level, store.macros, quadrature(2)
            )
            scale = np.abs(direct).max()
            assert np.abs(store.level(level) - direct).max() <= 1e-12 * scale

    def test_dca_scale_invariance(self):
        """Test that constant-eta diffusion matrices are the same on every level."""
        hierarchy = refine_hierarchy(build_macro_grid(1, 1), 2)
        eta = CoefficientEval(EvalMode.ANALYTIC, unit, hierarchy)
        macros = np.array([0])
        coarse = level_local_matrices(
            hierarchy, eta, OperatorKind.DIFFUSION, 0, macros, quadrature(2)
        )[0, 0]
        fine = level_local_matrices(
            hierarchy, eta, OperatorKind.DIFFUSION, 2, macros, quadrature(2)
        )[0, 0]
        np.testing.assert_allclose(fine, coarse, atol=1e-14)


class TestGalerkinOracle:
    """Tests of the distributed GCA against the dense triple product."""

    @pytest.mark.parametrize("kind", list(OperatorKind))
    def test_triple_product(self, kind):
        """Test GCA levels against P^T A P on a two-macro mesh with a jump."""
        assert galerkin_error(kind) <= 1e-12

    def test_dense_level_one(self, two_macros):
        """Test the assembled level-1 operator against a dense product."""
        _, eta = evaluator(two_macros, 2)
        plan = CoarseningPlan.full_gca(2)
        levels = build_agca_hierarchy(two_macros, eta, plan, OperatorKind.DIFFUSION)
        A2 = assemble_sparse(levels[2], dirichlet=False).toarray()
        P = prolongation_matrix(two_macros, 1).toarray()
        A1 = assemble_sparse(levels[1], dirichlet=False).toarray()
        error = np.linalg.norm(A1 - P.T @ A2 @ P) / np.linalg.norm(A1)
        assert error <= 1e-12


class TestLevelOperator:
    """Tests for the matrix-free AGCA level operators."""

    def test_empty_plan_is_dca(self, grid8):
        """Test that an empty GCA set reproduces the DCA operator and stores nothing."""
        _, eta = evaluator(grid8, 2)
        levels = build_agca_hierarchy(grid8, eta, CoarseningPlan.pure_dca(128))
        assert levels[0].store.stored_entries == 0
        assert not any(op.galerkin for op in levels)

    @pytest.mark.parametrize("kind", list(OperatorKind))
    def test_aligned_jump_agca_equals_dca(self, grid8, kind):
        """Test that AGCA and DCA coincide for the grid-aligned square."""
        source, eta = evaluator(grid8, 1)
        agca = build_agca_hierarchy(grid8, eta, select_macros(source, grid8, 10.0), kind)
        dca = build_agca_hierarchy(grid8, eta, CoarseningPlan.pure_dca(128), kind)
        assert agca[0].plan.gca_macros
        for a, d in zip(agca, dca):
            A, D = assemble_sparse(a), assemble_sparse(d)
            assert sparse_norm(A - D) <= 1e-12 * sparse_norm(D)

    def test_zero_input(self, two_macros):
        """Test that u = 0 maps to 0."""
        _, eta = evaluator(two_macros, 2)
        op = build_agca_hierarchy(two_macros, eta, CoarseningPlan.full_gca(2))[1]
        assert not np.any(apply_level(op, np.zeros(op.size)))

    @pytest.mark.parametrize("kind", list(OperatorKind))
    def test_apply_matches_assembled(self, grid8, kind):
        """Test the matrix-free action against the assembled matrix on random vectors."""
        source, eta = evaluator(grid8, 4)
        levels = build_agca_hierarchy(grid8, eta, select_macros(source, grid8, 10.0), kind)
        rng = np.random.default_rng(1)
        for op in levels:
            matrix = assemble_sparse(op)
            for _ in range(20):
                u = rng.standard_normal(op.size)
                expected = matrix @ u
                assert np.abs(op.apply(u) - expected).max() <= 1e-12 * np.abs(expected).max()

    def test_boundary_identity(self, grid8):
        """Test that boundary outputs equal boundary inputs."""
        _, eta = evaluator(grid8, 2)
        op = build_agca_hierarchy(grid8, eta, CoarseningPlan.pure_dca(128))[2]
        u = np.random.default_rng(2).standard_normal(op.size)
        np.testing.assert_array_equal(op.apply(u)[op.boundary], u[op.boundary])

    def test_symmetric_on_interior(self, grid8):
        """Test <A u, w> = <u, A w> for interior-supported vectors."""
        source, eta = evaluator(grid8, 2)
        op = build_agca_hierarchy(
            grid8, eta, select_macros(source, grid8, 10.0), OperatorKind.VISCOUS
        )[1]
        rng = np.random.default_rng(3)
        u, w = (np.where(op.interior, rng.standard_normal(op.size), 0.0) for _ in range(2))
        lhs, rhs = op.apply(u) @ w, u @ op.apply(w)
        assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)

    def test_constant_eta_dense_product(self, two_macros):
        """Test the finest level against a dense assembled product."""
        eta = CoefficientEval(EvalMode.ANALYTIC, unit, two_macros)
        op = build_agca_hierarchy(two_macros, eta, CoarseningPlan.pure_dca(2))[2]
        dense = assemble_sparse(op).toarray()
        u = np.where(op.interior, np.linspace(0.0, 1.0, op.size), 0.0)
        np.testing.assert_allclose(op.apply(u), dense @ u, atol=1e-13)

    @pytest.mark.parametrize(
        "kind,width", [(OperatorKind.DIFFUSION, 7), (OperatorKind.VISCOUS, 14)]
    )
    def test_stencil_width(self, grid8, kind, width):
        """Test the seven-point stencil bound per interior row."""
        source, eta = evaluator(grid8, 2)
        levels = build_agca_hierarchy(grid8, eta, select_macros(source, grid8, 10.0), kind)
        for op in levels:
            matrix = assemble_sparse(op)
            assert np.diff(matrix.indptr)[op.interior].max() <= width

    def test_galerkin_levels_spd(self):
        """Test that the interior blocks of the GCA level operators are SPD."""
        hierarchy = refine_hierarchy(build_macro_grid(2, 2), 2)
        _, eta = evaluator(hierarchy, 2)
        levels = build_agca_hierarchy(hierarchy, eta, CoarseningPlan.full_gca(8))
        for op in levels[1:]:
            dense = assemble_sparse(op).toarray()[np.ix_(op.interior, op.interior)]
            assert np.linalg.eigvalsh(dense).min() > 0.0

    def test_diagonal(self, grid8):
        """Test the matrix-free diagonal against the assembled one."""
        source, eta = evaluator(grid8, 4)
        op = build_agca_hierarchy(grid8, eta, select_macros(source, grid8, 10.0))[1]
        np.testing.assert_allclose(op.diagonal(), assemble_sparse(op).diagonal(), rtol=1e-13)

    def test_size_mismatch(self, two_macros):
        """Test that a wrongly sized vector raises OperatorError."""
        eta = CoefficientEval(EvalMode.ANALYTIC, unit, two_macros)
        op = build_agca_hierarchy(two_macros, eta, CoarseningPlan.pure_dca(2))[0]
        with pytest.raises(OperatorError):
            op.apply(np.zeros(op.size + 1))


class TestDumpPlan:
    """Tests for dump_plan."""

    def test_structured_text(self, two_macros):
        """Test the YAML listing of plan and stored matrix counts."""
        _, eta = evaluator(two_macros, 2)
        plan = CoarseningPlan.full_gca(2)
        store = build_gca_store(two_macros, eta, OperatorKind.DIFFUSION, plan)
        data = yaml.safe_load(dump_plan(plan, store))
        assert data["c_agca"] == 1.0
        assert data["gca_macros"] == [0, 1]
        assert data["stored_matrices"] == {0: 2, 1: 8}
        assert data["stored_entries"] == 10 * 9
