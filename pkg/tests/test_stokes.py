"""Tests for the Stokes operator, BFBT and the block-triangular preconditioner."""

import numpy as np
import pytest
import scipy.sparse as sp

from agca_multigrid.coarsening import CoarseningPlan, assemble_sparse, build_agca_hierarchy
from agca_multigrid.fem import CoefficientEval
from agca_multigrid.mesh import build_macro_grid, refine_hierarchy
from agca_multigrid.models import (
    CoarseningConfig,
    CoarseningMode,
    EvalMode,
    KrylovConfig,
    MeshConfig,
    ProblemConfig,
    RunConfig,
    SchurSign,
)
from agca_multigrid.problems import scalar_load, viscosity
from agca_multigrid.solvers import fgmres
from agca_multigrid.stokes import (
    BfbtPreconditioner,
    BlockTriangularPreconditioner,
    StokesError,
    StokesOperator,
    assemble_divergence,
    assemble_Z,
    build_stokes_system,
    solve_stokes,
)


def small_config(**problem):
    """Return a 2x2 macro grid, L = 2 configuration."""
    values = {"family": 2, "dynamic_ratio": 1.0e4}
    values.update(problem)
    return RunConfig(mesh=MeshConfig(nx=2, ny=2, levels=2), problem=ProblemConfig(**values))


@pytest.fixture(scope="module")
def system():
    """Build the Stokes system of the small configuration once."""
    return build_stokes_system(small_config())


def deep_pressure_dofs(hierarchy, level):
    """Return pressure DoFs whose level-(l-1) patch avoids the boundary."""
    coarse = level - 1
    boundary = hierarchy.boundary_mask(coarse)
    cells = hierarchy.cells(coarse).reshape(-1, 3)
    touching = np.unique(cells[boundary[cells].any(axis=-1)])
    deep = np.ones(hierarchy.num_vertices(coarse), dtype=bool)
    deep[touching] = False
    return deep


class TestDivergence:
    """Tests for assemble_divergence."""

    @pytest.fixture
    def hierarchy(self):
        """Create a 3x3 macro grid refined twice."""
        return refine_hierarchy(build_macro_grid(3, 3), 2)

    def test_shape_and_boundary_columns(self, hierarchy):
        """Test the shape and zero columns at Dirichlet velocity DoFs."""
        B = assemble_divergence(hierarchy, 2)
        assert B.shape == (hierarchy.num_vertices(1), 2 * hierarchy.num_vertices(2))
        mask = hierarchy.vector_boundary_mask(2)
        assert abs(B[:, mask]).sum() == 0.0

    def test_constant_velocity(self, hierarchy):
        """Test zero divergence of a constant field on deep pressure DoFs."""
        B = assemble_divergence(hierarchy, 2)
        n = hierarchy.num_vertices(2)
        u = np.concatenate([np.ones(n), 0.5 * np.ones(n)])
        u[hierarchy.vector_boundary_mask(2)] = 0.0
        deep = deep_pressure_dofs(hierarchy, 2)
        assert deep.any()
        np.testing.assert_allclose((B @ u)[deep], 0.0, atol=1e-14)

    def test_linear_velocity(self, hierarchy):
        """Test -integral(psi_k div(x, y)) = -2 integral(psi_k) on deep pressure DoFs."""
        B = assemble_divergence(hierarchy, 2)
        coords = hierarchy.coordinates(2)
        u = np.concatenate([coords[:, 0], coords[:, 1]])
        u[hierarchy.vector_boundary_mask(2)] = 0.0
        deep = deep_pressure_dofs(hierarchy, 2)
        mass = scalar_load(hierarchy, 1, lambda x, y: np.ones_like(x))
        np.testing.assert_allclose((B @ u)[deep], -2.0 * mass[deep], rtol=1e-12)

    def test_level_zero(self, hierarchy):
        """Test that a velocity level 0 has no pressure level."""
        with pytest.raises(StokesError):
            assemble_divergence(hierarchy, 0)


class TestZ:
    """Tests for assemble_Z."""

    def test_constant_nullspace(self, system):
        """Test Z 1 = 0."""
        Z = system.bfbt.Z
        ones = np.ones(Z.shape[0])
        assert np.abs(Z @ ones).max() <= 1e-12 * abs(Z).max()

    def test_symmetric_positive_diagonal(self, system):
        """Test symmetry and a positive diagonal."""
        Z = system.bfbt.Z
        assert abs(Z - Z.T).max() <= 1e-14 * abs(Z).max()
        assert np.all(Z.diagonal() > 0.0)

    def test_nonpositive_weight(self, system):
        """Test that a nonpositive diag(A) raises StokesError."""
        W = system.bfbt.W.copy()
        W[0] = 0.0
        with pytest.raises(StokesError):
            assemble_Z(system.operator.B, W)


class TestStokesOperator:
    """Tests for StokesOperator."""

    def test_zero(self, system):
        """Test K (0, 0) = (0, 0)."""
        op = system.operator
        r_u, r_p = op.apply_K(np.zeros(op.n_u), np.zeros(op.n_p))
        assert not np.any(r_u) and not np.any(r_p)

    def test_boundary_rows_identity(self, system):
        """Test that boundary velocity rows return the input."""
        op = system.operator
        rng = np.random.default_rng(0)
        u, p = rng.standard_normal(op.n_u), rng.standard_normal(op.n_p)
        r_u, _ = op.apply_K(u, p)
        boundary = op.A.boundary
        np.testing.assert_array_equal(r_u[boundary], u[boundary])

    def test_symmetric(self, system):
        """Test <K x, y> = <x, K y> for boundary-free vectors."""
        op = system.operator
        rng = np.random.default_rng(1)
        interior = np.concatenate([op.A.interior, np.ones(op.n_p, dtype=bool)])
        x, y = (np.where(interior, rng.standard_normal(op.size), 0.0) for _ in range(2))
        lhs, rhs = op.apply(x) @ y, x @ op.apply(y)
        assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)

    def test_matches_assembled(self, system):
        """Test apply_K against the assembled K on random vectors."""
        op = system.operator
        K = sp.bmat([[assemble_sparse(op.A), op.BT], [op.B, None]]).tocsr()
        rng = np.random.default_rng(5)
        for _ in range(5):
            x = rng.standard_normal(op.size)
            expected = K @ x
            error = np.linalg.norm(op.apply(x) - expected)
            assert error <= 1e-12 * np.linalg.norm(expected)

    def test_constant_pressure_nullspace(self, system):
        """Test that the constant pressure is annihilated."""
        op = system.operator
        x = op.join(np.zeros(op.n_u), np.ones(op.n_p))
        assert np.abs(op.apply(x)).max() <= 1e-12

    def test_size_mismatch(self, system):
        """Test that wrongly sized vectors raise StokesError."""
        op = system.operator
        with pytest.raises(StokesError):
            op.apply_K(np.zeros(op.n_u + 1), np.zeros(op.n_p))
        with pytest.raises(StokesError):
            op.split(np.zeros(op.size - 1))

    def test_requires_viscous_block(self):
        """Test that a diffusion operator is rejected as velocity block."""
        hierarchy = refine_hierarchy(build_macro_grid(1, 1), 1)
        eta = CoefficientEval(EvalMode.ANALYTIC, viscosity(ProblemConfig(family="poisson")))
        levels = build_agca_hierarchy(hierarchy, eta, CoarseningPlan.pure_dca(2))
        with pytest.raises(StokesError):
            StokesOperator(levels[-1], assemble_divergence(hierarchy, 1))


class TestBfbt:
    """Tests for BfbtPreconditioner."""

    def test_zero(self, system):
        """Test that r_p = 0 maps to 0."""
        assert not np.any(system.bfbt(np.zeros(system.operator.n_p)))

    def test_constant_input(self, system):
        """Test that a constant residual is projected away."""
        assert not np.any(system.bfbt(np.full(system.operator.n_p, 3.0)))

    def test_mean_free_output(self, system):
        """Test that the output has zero mean and the Z-solves are counted."""
        bfbt = BfbtPreconditioner(system.operator.A, system.operator.B, z_tol=1e-8)
        r = np.random.default_rng(2).standard_normal(system.operator.n_p)
        out = bfbt(r)
        assert abs(out.mean()) <= 1e-12 * np.abs(out).max()
        assert bfbt.z_iterations > 0
        assert bfbt.z_failures == 0

    def test_z_solve(self, system):
        """Test that the projected Z-solve inverts Z on mean-free vectors."""
        bfbt = BfbtPreconditioner(system.operator.A, system.operator.B, z_tol=1e-10)
        r = np.random.default_rng(3).standard_normal(system.operator.n_p)
        r -= r.mean()
        t = bfbt.z_solve(r)
        np.testing.assert_allclose(bfbt.Z @ t, r, atol=1e-8 * np.abs(r).max())


    def test_weight_as_middle_operator(self, system):
        """Test that A replaced by W collapses BFBT to one projected Z-solve."""
        op = system.operator
        W = op.A.diagonal()
        bfbt = BfbtPreconditioner(op.A, op.B, z_tol=1e-12, velocity_apply=lambda v: W * v)
        r = np.random.default_rng(6).standard_normal(op.n_p)
        r -= r.mean()
        expected = np.linalg.pinv(bfbt.Z.toarray(), 1e-10, hermitian=True) @ r
        np.testing.assert_allclose(bfbt(r), expected, atol=1e-6 * np.abs(expected).max())


class TestBlockTriangular:
    """Tests for the block-triangular preconditioner."""

    def exact(self, system, sign):
        """Return a preconditioner with exact velocity and Schur inverses."""
        op = system.operator
        A_inv = np.linalg.inv(assemble_sparse(op.A).toarray())
        B = op.B.toarray()
        S_pinv = np.linalg.pinv(B @ A_inv @ B.T, 1e-10)
        return BlockTriangularPreconditioner(
            op, lambda r: A_inv @ r, lambda r: S_pinv @ r, sign
        )

    def rhs(self, system):
        """Return b = K x with a mean-free pressure."""
        op = system.operator
        rng = np.random.default_rng(4)
        u = rng.standard_normal(op.n_u)
        p = rng.standard_normal(op.n_p)
        return op.apply(op.join(u, p - p.mean()))

    @pytest.mark.parametrize("sign,bound", [(SchurSign.PLUS, 3), (SchurSign.MINUS, 2)])
    def test_exact_inverses(self, system, sign, bound):
        """Test the iteration counts with exact inner solves."""
        precond = self.exact(system, sign)
        cfg = KrylovConfig(tol=1e-8, max_iter=10)
        _, report = fgmres(system.operator.apply, self.rhs(system), precond, cfg)
        assert report.converged
        assert report.iterations <= bound

    def test_zero(self, system):
        """Test that a zero residual maps to zero."""
        op = system.operator
        u, p = system.preconditioner.apply_Q_inv(np.zeros(op.n_u), np.zeros(op.n_p))
        assert not np.any(u) and not np.any(p)

    @pytest.mark.parametrize("alpha", [4.0, -0.5])
    def test_linear(self, system, alpha):
        """Test Q^-1(alpha r) = alpha Q^-1(r) for the multigrid and BFBT preconditioner."""
        op = system.operator
        rng = np.random.default_rng(7)
        r_u, r_p = rng.standard_normal(op.n_u), rng.standard_normal(op.n_p)
        u, p = system.preconditioner.apply_Q_inv(r_u, r_p)
        u_scaled, p_scaled = system.preconditioner.apply_Q_inv(alpha * r_u, alpha * r_p)
        np.testing.assert_allclose(u_scaled, alpha * u, rtol=1e-10, atol=1e-14)
        np.testing.assert_allclose(p_scaled, alpha * p, rtol=1e-10, atol=1e-14)

    def test_timings(self, system):
        """Test that the component timers advance."""
        op = system.operator
        precond = self.exact(system, SchurSign.PLUS)
        precond(np.ones(op.size))
        assert precond.timings["velocity"] > 0.0
        assert precond.timings["schur"] > 0.0


class TestSolveStokes:
    """End-to-end Stokes solves."""

    def test_small_unaligned(self):
        """Test convergence and a mean-free pressure on the small configuration."""
        config = small_config()
        u, p, report = solve_stokes(config)
        assert report.converged
        assert report.relative_residuals[-1] <= 1e-6
        assert abs(p.mean()) <= 1e-12 * max(np.abs(p).max(), 1.0)
        assert report.c_agca is not None
        assert report.memory is not None
        assert report.memory.n_dofs == 2 * 81 + 25
        assert set(report.timings) >= {"setup", "solve", "velocity", "schur"}
        assert u.shape == (2 * 81,)

    def test_residual_history_monotone(self):
        """Test that the Arnoldi residual estimates never increase."""
        _, _, report = solve_stokes(small_config(family=1))
        history = np.array(report.residuals)
        assert np.all(history[1:] <= history[:-1] * (1 + 1e-12))

    def test_not_converged_reported(self):
        """Test that an iteration cap is reported, not raised."""
        config = small_config(dynamic_ratio=1.0e8)
        config.solver.krylov.max_iter = 1
        _, _, report = solve_stokes(config)
        assert not report.converged
        assert report.iterations == 1

    @pytest.mark.slow
    def test_aligned_jump(self):
        """Test the aligned square, DR = 1e4, 8x8 macros, L = 3."""
        config = RunConfig(
            mesh=MeshConfig(nx=8, ny=8, levels=3),
            problem=ProblemConfig(family=1, dynamic_ratio=1.0e4),
        )
        _, p, report = solve_stokes(config)
        assert report.converged
        assert report.relative_residuals[-1] <= 1e-6
        assert abs(p.mean()) <= 1e-10 * max(np.abs(p).max(), 1.0)

        config.solver.krylov.tol = 1e-3
        _, _, relaxed = solve_stokes(config)
        assert relaxed.converged
        assert relaxed.iterations < report.iterations

    @pytest.mark.slow
    def test_constant_viscosity_not_harder(self):
        """Test that DR = 1 needs no more iterations than DR = 1e4."""
        iterations = []
        for ratio in (1.0, 1.0e4):
            config = RunConfig(
                mesh=MeshConfig(nx=8, ny=8, levels=3),
                problem=ProblemConfig(family=1, dynamic_ratio=ratio),
                coarsening=CoarseningConfig(mode=CoarseningMode.AGCA),
            )
            _, _, report = solve_stokes(config)
            assert report.converged
            iterations.append(report.iterations)
        assert iterations[0] <= iterations[1]
