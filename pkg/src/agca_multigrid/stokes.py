"""The (P1-iso-P2, P1) Stokes system and its block-triangular BFBT preconditioner.

Velocities live on level l of the hierarchy, pressures on level l-1. The saddle-point
operator is K = [[A, B^T], [B, 0]] with the matrix-free viscous block A (an AGCA level
operator) and the assembled divergence B, which is always re-discretized. Columns of B that
belong to Dirichlet velocity DoFs are removed, so boundary rows of K are the identity.

The Schur complement is approximated by the diag(A)-BFBT (least-squares commutator)
inverse Z^-1 (B W^-1 A W^-1 B^T) Z^-1 with W = diag(A) and the assembled Z = B W^-1 B^T.
Z has the constant pressure as its nullspace, so every Z-solve projects out the mean.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray

from .coarsening import (
    CoarseningPlan,
    LevelOperator,
    OperatorKind,
    build_agca_hierarchy,
    build_multigrid,
    plan_for_mode,
)
from .fem import CoefficientEval, divergence_kernel, quadrature
from .memory import memory_tally_2d
from .mesh import (
    MeshHierarchy,
    build_macro_grid,
    child_table,
    reference_elements,
    refine_hierarchy,
)
from .models import RunConfig, SchurSign, SolveReport
from .problems import load_vector, rhs, viscosity
from .solvers import (
    LinearMap,
    MultigridPreconditioner,
    SsorPreconditioner,
    cg,
    fgmres,
    project_mean,
)
from .transfer import interp_table

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

DEFAULT_Z_TOL = 1.0e-4


class StokesError(ValueError):
    """Raised for mismatched velocity/pressure levels or a nonpositive diag(A)."""

    pass


def assemble_divergence(hierarchy: MeshHierarchy, level: int) -> sp.csr_matrix:
    """Assemble B_l, coupling level-(l-1) pressures to level-l velocities.

    Entry (k, j) is -integral(psi_k div(phi_j)). Columns of boundary velocity DoFs are zero.

    Args:
        hierarchy: The mesh hierarchy.
        level: Velocity level l >= 1.

    Returns:
        Sparse matrix of shape (N_vertices(l-1), 2 * N_vertices(l)).

    Raises:
        StokesError: If l < 1 or l exceeds the finest level.
    """
    if not 1 <= level <= hierarchy.max_level:
        raise StokesError(f"Velocity level must be in 1..{hierarchy.max_level}, got {level}")
    coarse = level - 1
    children = child_table(coarse)
    _, kinds = reference_elements(coarse)
    interp = np.stack([interp_table(int(k)) for k in kinds])
    child_coords = hierarchy.element_coordinates(level)[:, children]
    blocks = -divergence_kernel(child_coords, interp)

    pressure = hierarchy.cells(coarse)[:, :, None, :, None]
    velocity = hierarchy.vector_cells(level)[:, children][:, :, :, None, :]
    rows = np.broadcast_to(pressure, blocks.shape).ravel()
    cols = np.broadcast_to(velocity, blocks.shape).ravel()
    shape = (hierarchy.num_vertices(coarse), 2 * hierarchy.num_vertices(level))
    matrix = sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=shape).tocsr()
    keep = sp.diags((~hierarchy.vector_boundary_mask(level)).astype(np.float64))
    matrix = (matrix @ keep).tocsr()
    matrix.eliminate_zeros()
    return matrix


def assemble_Z(B: sp.spmatrix, W: FloatArray) -> sp.csr_matrix:
    """Return Z = B diag(W)^-1 B^T.

    Raises:
        StokesError: If W has a nonpositive entry.
    """
    if np.any(W <= 0.0):
        raise StokesError(f"diag(A) must be positive (minimum {float(np.min(W)):.3e})")
    B = sp.csr_matrix(B)
    Z = (B @ sp.diags(1.0 / W) @ B.T).tocsr()
    Z.sum_duplicates()
    return Z


class StokesOperator:
    """Matrix-free application of K = [[A, B^T], [B, 0]]."""

    def __init__(self, A: LevelOperator, B: sp.spmatrix):
        """Initialize the operator.

        Raises:
            StokesError: If A is not a viscous operator or the shapes of A and B differ.
        """
        if A.kind is not OperatorKind.VISCOUS:
            raise StokesError("The velocity block must be a viscous operator")
        B = sp.csr_matrix(B)
        if B.shape[1] != A.size:
            raise StokesError(f"B has {B.shape[1]} velocity columns, A acts on {A.size} DoFs")
        if B.shape[0] != A.hierarchy.num_vertices(A.level - 1):
            raise StokesError(f"B rows do not match pressure level {A.level - 1}")
        self.A = A
        self.B = B
        self.BT = B.T.tocsr()
        self.n_u = A.size
        self.n_p = B.shape[0]
        self.size = self.n_u + self.n_p

    @property
    def velocity_level(self) -> int:
        """Return l."""
        return self.A.level

    @property
    def pressure_level(self) -> int:
        """Return l - 1."""
        return self.A.level - 1

    def split(self, x: FloatArray) -> tuple[FloatArray, FloatArray]:
        """Split a stacked vector into velocity and pressure."""
        if x.shape != (self.size,):
            raise StokesError(f"Expected a vector of size {self.size}, got {x.shape}")
        return x[: self.n_u], x[self.n_u :]

    def join(self, u: FloatArray, p: FloatArray) -> FloatArray:
        """Stack velocity and pressure."""
        return np.concatenate([u, p])

    def apply_K(self, u: FloatArray, p: FloatArray) -> tuple[FloatArray, FloatArray]:
        """Return (A u + B^T p, B u) with identity rows on boundary velocities.

        Raises:
            StokesError: If u or p do not match their levels.
        """
        if u.shape != (self.n_u,) or p.shape != (self.n_p,):
            raise StokesError(
                f"Expected velocity {self.n_u} and pressure {self.n_p}, "
                f"got {u.shape} and {p.shape}"
            )
        r_u = self.A.apply(u) + self.BT @ p
        r_p = self.B @ u
        return r_u, np.asarray(r_p, dtype=np.float64)

    def apply(self, x: FloatArray) -> FloatArray:
        """Apply K to a stacked vector."""
        return self.join(*self.apply_K(*self.split(x)))

    __call__ = apply


class BfbtPreconditioner:
    """diag(A)-BFBT approximation of the inverse Schur complement."""

    def __init__(
        self,
        A: LevelOperator,
        B: sp.spmatrix,
        z_tol: float = DEFAULT_Z_TOL,
        z_max_iter: int = 1000,
        sor_omega: float = 1.0,
        velocity_apply: Optional[LinearMap] = None,
    ):
        """Assemble Z and factor its SSOR sweeps.

        Args:
            A: Finest viscous level operator.
            B: Assembled divergence.
            z_tol: Relative tolerance of the projected CG Z-solves.
            z_max_iter: Iteration cap of the Z-solves.
            sor_omega: Relaxation factor of the SSOR preconditioner.
            velocity_apply: Replacement for the middle A application.

        Raises:
            StokesError: If diag(A) has a nonpositive entry.
        """
        self.W = A.diagonal()
        self.Z = assemble_Z(B, self.W)
        self.B = sp.csr_matrix(B)
        self.BT = self.B.T.tocsr()
        self.W_inv = 1.0 / self.W
        self.velocity_apply = velocity_apply or A.apply
        self.z_tol = z_tol
        self.z_max_iter = z_max_iter
        self.z_precond = SsorPreconditioner(self.Z, sor_omega)
        self.z_iterations = 0
        self.z_failures = 0
        logger.info("Z: %d pressure DoFs, %d nonzeros", self.Z.shape[0], self.Z.nnz)

    def z_solve(self, r: FloatArray) -> FloatArray:
        """Solve Z t = r on the mean-free subspace."""
        t, report = cg(
            lambda v: self.Z @ v,
            r,
            precond=self.z_precond,
            tol=self.z_tol,
            max_iter=self.z_max_iter,
            project=project_mean,
        )
        self.z_iterations += report.iterations
        if not report.converged:
            self.z_failures += 1
            logger.warning(
                "Z-solve stopped after %d iterations at relative residual %.3e",
                report.iterations,
                report.relative_residuals[-1],
            )
        return t

    def middle(self, t: FloatArray) -> FloatArray:
        """Apply B W^-1 A W^-1 B^T."""
        v = self.W_inv * (self.BT @ t)
        return np.asarray(self.B @ (self.W_inv * self.velocity_apply(v)), dtype=np.float64)

    def apply_bfbt(self, r_p: FloatArray) -> FloatArray:
        """Return the mean-free approximation of S^-1 r_p."""
        r_p = project_mean(np.asarray(r_p, dtype=np.float64))
        if not np.any(r_p):
            return np.zeros_like(r_p)
        t = self.z_solve(r_p)
        return project_mean(self.z_solve(self.middle(t)))

    __call__ = apply_bfbt


class BlockTriangularPreconditioner:
    """Upper block-triangular preconditioner Q^-1 for FGMRES.

    The pressure is preconditioned first, p = S^-1 r_p, then the velocity,
    u = A^-1 (r_u + s B^T p) with s = +1 (``plus``) or -1 (``minus``).
    """

    def __init__(
        self,
        operator: StokesOperator,
        velocity_solve: LinearMap,
        schur_solve: LinearMap,
        sign: SchurSign = SchurSign.PLUS,
    ):
        self.operator = operator
        self.velocity_solve = velocity_solve
        self.schur_solve = schur_solve
        self.sign = sign
        self.timings: dict[str, float] = {"velocity": 0.0, "schur": 0.0}

    def apply_Q_inv(self, r_u: FloatArray, r_p: FloatArray) -> tuple[FloatArray, FloatArray]:
        """Apply Q^-1 to a residual pair."""
        start = time.perf_counter()
        p_hat = self.schur_solve(r_p)
        middle = time.perf_counter()
        u_hat = self.velocity_solve(r_u + self.sign.factor * (self.operator.BT @ p_hat))
        self.timings["schur"] += middle - start
        self.timings["velocity"] += time.perf_counter() - middle
        return u_hat, p_hat

    def apply(self, r: FloatArray) -> FloatArray:
        """Apply Q^-1 to a stacked residual."""
        return self.operator.join(*self.apply_Q_inv(*self.operator.split(r)))

    __call__ = apply


@dataclass
class StokesSystem:
    """Everything a Stokes solve needs, built once per configuration."""

    hierarchy: MeshHierarchy
    eta: CoefficientEval
    plan: CoarseningPlan
    levels: list[LevelOperator]
    operator: StokesOperator
    multigrid: MultigridPreconditioner
    bfbt: BfbtPreconditioner
    preconditioner: BlockTriangularPreconditioner
    rhs: FloatArray
    setup_seconds: float = 0.0
    timings: dict[str, float] = field(default_factory=dict)


def build_hierarchy(config: RunConfig) -> MeshHierarchy:
    """Return the mesh hierarchy of a run configuration."""
    macro = build_macro_grid(config.mesh.nx, config.mesh.ny)
    return refine_hierarchy(macro, config.mesh.levels)


def build_stokes_system(
    config: RunConfig,
    hierarchy: Optional[MeshHierarchy] = None,
    plan: Optional[CoarseningPlan] = None,
) -> StokesSystem:
    """Build the AGCA velocity hierarchy, B, BFBT and the preconditioner.

    Args:
        config: Run configuration.
        hierarchy: Reuse an existing hierarchy.
        plan: Reuse an existing coarsening plan.
    """
    start = time.perf_counter()
    hierarchy = hierarchy or build_hierarchy(config)
    problem = config.problem
    solver = config.solver
    source = viscosity(problem)
    eta = CoefficientEval(problem.eval_mode, source, hierarchy)
    if plan is None:
        plan = plan_for_mode(config.coarsening.mode, source, hierarchy, config.coarsening.nu)
    rule = quadrature(solver.quadrature_degree)
    levels = build_agca_hierarchy(hierarchy, eta, plan, OperatorKind.VISCOUS, rule)
    finest = levels[-1]
    B = assemble_divergence(hierarchy, hierarchy.max_level)
    operator = StokesOperator(finest, B)
    multigrid = build_multigrid(hierarchy, levels, solver.vcycle)
    bfbt = BfbtPreconditioner(
        finest,
        B,
        z_tol=solver.inner_tolerance(),
        z_max_iter=solver.z_max_iter,
        sor_omega=solver.vcycle.sor_omega,
    )
    preconditioner = BlockTriangularPreconditioner(
        operator, multigrid.vcycle, bfbt.apply_bfbt, solver.schur_sign
    )
    f = load_vector(hierarchy, hierarchy.max_level, rhs(problem))
    b = operator.join(f, np.zeros(operator.n_p))
    setup = time.perf_counter() - start
    logger.info(
        "Stokes system: %d velocity + %d pressure DoFs, setup %.2fs",
        operator.n_u,
        operator.n_p,
        setup,
    )
    return StokesSystem(
        hierarchy=hierarchy,
        eta=eta,
        plan=plan,
        levels=levels,
        operator=operator,
        multigrid=multigrid,
        bfbt=bfbt,
        preconditioner=preconditioner,
        rhs=b,
        setup_seconds=setup,
    )


def solve_stokes(
    config: RunConfig, system: Optional[StokesSystem] = None
) -> tuple[FloatArray, FloatArray, SolveReport]:
    """Solve the Stokes problem of a configuration with BFBT-preconditioned FGMRES.

    Args:
        config: Run configuration.
        system: Prebuilt system; built from the configuration when omitted.

    Returns:
        Velocity, mean-free pressure and the solve report with its timings and memory
        tally. Non-convergence is reported, never raised.
    """
    system = system or build_stokes_system(config)
    x, report = fgmres(
        system.operator.apply, system.rhs, system.preconditioner, config.solver.krylov
    )
    u, p = system.operator.split(x)
    p = project_mean(p)
    timings = {"setup": system.setup_seconds, "solve": report.seconds}
    timings.update(system.preconditioner.timings)
    memory = memory_tally_2d(
        system.hierarchy, system.plan, config.solver.krylov.restart, system
    )
    report = report.model_copy(
        update={"timings": timings, "c_agca": system.plan.c_agca, "memory": memory}
    )
    logger.info(
        "FGMRES %s after %d iterations (relative residual %.3e)",
        "converged" if report.converged else "did not converge",
        report.iterations,
        report.relative_residuals[-1],
    )
    return u.copy(), p, report
