"""Krylov solvers, relaxation and the geometric V-cycle.

Operators are plain callables ``v -> A v`` on 1D numpy arrays; assembled matrices enter
only where a sweep needs rows (SOR/SSOR on the coarsest level and on Z). Nothing in this
module knows about meshes: the V-cycle receives its level operators and transfer callables
from the caller.
"""

import logging
import time
from collections.abc import Callable, Sequence
from typing import Optional, Protocol

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.typing import NDArray

from .models import KrylovConfig, SolveReport, VCycleConfig

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
BoolArray = NDArray[np.bool_]
LinearMap = Callable[[FloatArray], FloatArray]
Transfer = Callable[[FloatArray, int], FloatArray]

EPS = float(np.finfo(np.float64).eps)


class SolverError(RuntimeError):
    """Base class of solver failures."""

    pass


class EstimationError(SolverError):
    """Raised when no spectral estimate can be formed (zero operator)."""

    pass


class IndefiniteError(SolverError):
    """Raised when CG meets a non-positive curvature p^T A p."""

    pass


class HierarchyError(SolverError):
    """Raised for a V-cycle hierarchy with missing levels."""

    pass


class MatrixError(ValueError):
    """Raised for assembled matrices unusable by a sweep (zero diagonal)."""

    pass


class IntervalError(ValueError):
    """Raised for an invalid Chebyshev interval."""

    pass


def identity(v: FloatArray) -> FloatArray:
    """Return v unchanged."""
    return v


def project_mean(v: FloatArray) -> FloatArray:
    """Return v with its mean removed."""
    return v - np.mean(v)


def estimate_lambda_max(
    apply: LinearMap,
    diagonal: FloatArray,
    mask: Optional[BoolArray] = None,
    iterations: int = 25,
    seed: int = 0,
) -> float:
    """Estimate the largest eigenvalue of D^-1 A by power iteration.

    Args:
        apply: The operator A.
        diagonal: Its diagonal D.
        mask: DoFs taking part (interior DoFs); others are held at zero.
        iterations: Number of power iterations.
        seed: Seed of the starting vector.

    Returns:
        The Rayleigh quotient x^T A x / x^T D x of the final iterate.

    Raises:
        EstimationError: If the operator annihilates the iterate.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(diagonal.size)
    if mask is not None:
        x[~mask] = 0.0
    x /= np.linalg.norm(x)
    for _ in range(iterations):
        y = apply(x)
        if mask is not None:
            y[~mask] = 0.0
        y = y / diagonal
        norm = float(np.linalg.norm(y))
        if norm == 0.0 or not np.isfinite(norm):
            raise EstimationError("Power iteration collapsed; operator is zero on the subspace")
        x = y / norm
    ax = apply(x)
    if mask is not None:
        ax[~mask] = 0.0
    estimate = float(x @ ax) / float(x @ (diagonal * x))
    if not estimate > 0.0:
        raise EstimationError(f"Non-positive eigenvalue estimate {estimate}")
    return estimate


def chebyshev_smooth(
    apply: LinearMap,
    diagonal: FloatArray,
    b: FloatArray,
    x: FloatArray,
    order: int,
    interval: tuple[float, float],
    mask: Optional[BoolArray] = None,
) -> FloatArray:
    """Apply a Jacobi-preconditioned Chebyshev polynomial smoother.

    Args:
        apply: The operator A.
        diagonal: Its diagonal D.
        b: Right-hand side.
        x: Current iterate (not modified).
        order: Polynomial order k (number of operator applications).
        interval: Eigenvalue interval [lo, hi] of D^-1 A to damp.
        mask: DoFs that may be updated; others are left untouched.

    Returns:
        The smoothed iterate.

    Raises:
        IntervalError: Unless 0 < lo < hi.
    """
    lo, hi = interval
    if not 0.0 < lo < hi:
        raise IntervalError(f"Invalid smoothing interval [{lo}, {hi}]")
    if order < 1:
        raise ValueError(f"Chebyshev order must be >= 1, got {order}")
    theta = 0.5 * (hi + lo)
    delta = 0.5 * (hi - lo)
    sigma = theta / delta
    rho = 1.0 / sigma

    def preconditioned_residual(current: FloatArray) -> FloatArray:
        z = (b - apply(current)) / diagonal
        if mask is not None:
            z[~mask] = 0.0
        return z

    x = np.array(x, dtype=np.float64)
    d = preconditioned_residual(x) / theta
    x += d
    for _ in range(1, order):
        rho_next = 1.0 / (2.0 * sigma - rho)
        d = rho_next * rho * d + (2.0 * rho_next / delta) * preconditioned_residual(x)
        x += d
        rho = rho_next
    return x


def _checked_diagonal(matrix: sp.csr_matrix) -> FloatArray:
    diag = np.asarray(matrix.diagonal(), dtype=np.float64)
    if np.any(diag == 0.0):
        raise MatrixError(f"Zero diagonal entry at row {int(np.flatnonzero(diag == 0.0)[0])}")
    return diag


def sor_sweep(
    matrix: sp.spmatrix, b: FloatArray, x: FloatArray, omega: float = 1.0
) -> FloatArray:
    """Perform one forward SOR sweep.

    Raises:
        MatrixError: If the matrix has a zero diagonal entry.
    """
    matrix = sp.csr_matrix(matrix)
    diag = _checked_diagonal(matrix)
    lower = (sp.diags(diag / omega) + sp.tril(matrix, k=-1)).tocsr()
    rest = sp.triu(matrix, k=1) + sp.diags((1.0 - 1.0 / omega) * diag)
    rhs = np.asarray(b, dtype=np.float64) - rest @ np.asarray(x, dtype=np.float64)
    return np.asarray(spla.spsolve_triangular(lower, rhs, lower=True), dtype=np.float64)


class SsorPreconditioner:
    """Symmetric SOR sweep from a zero initial guess, used as a CG preconditioner."""

    def __init__(self, matrix: sp.spmatrix, omega: float = 1.0):
        """Factor the two triangular sweeps.

        Raises:
            MatrixError: If the matrix has a zero diagonal entry.
        """
        matrix = sp.csr_matrix(matrix)
        self.omega = omega
        self.diagonal = _checked_diagonal(matrix)
        scaled = sp.diags(self.diagonal / omega)
        options = {"permc_spec": "NATURAL", "diag_pivot_thresh": 0.0}
        self._lower = spla.splu((scaled + sp.tril(matrix, k=-1)).tocsc(), **options)
        self._upper = spla.splu((scaled + sp.triu(matrix, k=1)).tocsc(), **options)
        self._scale = (2.0 - omega) / omega * self.diagonal

    def __call__(self, r: FloatArray) -> FloatArray:
        """Return M^-1 r."""
        y = self._lower.solve(np.asarray(r, dtype=np.float64))
        return np.asarray(self._upper.solve(self._scale * y), dtype=np.float64)


def cg(
    apply: LinearMap,
    b: FloatArray,
    precond: Optional[LinearMap] = None,
    tol: float = 1.0e-6,
    max_iter: int = 1000,
    x0: Optional[FloatArray] = None,
    project: Optional[LinearMap] = None,
    floor_factor: float = 10.0,
) -> tuple[FloatArray, SolveReport]:
    """Solve with the preconditioned conjugate gradient method.

    Args:
        apply: Symmetric positive (semi)definite operator.
        b: Right-hand side.
        precond: Symmetric positive preconditioner.
        tol: Relative residual tolerance.
        max_iter: Iteration cap.
        x0: Initial guess (zero when omitted).
        project: Projection onto the solve subspace, applied to b, iterates and residuals.
        floor_factor: Machine-precision floor as a multiple of eps * ||b||.

    Returns:
        The solution and its report.

    Raises:
        IndefiniteError: On non-positive curvature.
    """
    start = time.perf_counter()
    precond = precond or identity
    proj = project or identity
    b = proj(np.asarray(b, dtype=np.float64))
    bnorm = float(np.linalg.norm(b))
    target = max(tol * bnorm, floor_factor * EPS * bnorm)
    x = np.zeros_like(b) if x0 is None else proj(np.array(x0, dtype=np.float64))
    r = proj(b - apply(x)) if x0 is not None else b.copy()
    history = [float(np.linalg.norm(r))]
    converged = history[0] <= target
    iterations = 0
    if not converged:
        z = proj(precond(r))
        p = z.copy()
        rz = float(r @ z)
        for iterations in range(1, max_iter + 1):
            q = apply(p)
            curvature = float(p @ q)
            if curvature <= 0.0:
                raise IndefiniteError(f"CG breakdown: p^T A p = {curvature:.3e}")
            alpha = rz / curvature
            x = proj(x + alpha * p)
            r = proj(r - alpha * q)
            history.append(float(np.linalg.norm(r)))
            if history[-1] <= target:
                converged = True
                break
            z = proj(precond(r))
            rz_next = float(r @ z)
            if rz_next <= 0.0:
                raise IndefiniteError(f"CG breakdown: preconditioned r^T z = {rz_next:.3e}")
            p = z + (rz_next / rz) * p
            rz = rz_next
    report = SolveReport(
        method="cg",
        iterations=iterations,
        residuals=history,
        rhs_norm=bnorm,
        tol=tol,
        converged=converged,
        final_residual=history[-1],
        seconds=time.perf_counter() - start,
    )
    return x, report


def fgmres(
    apply: LinearMap,
    b: FloatArray,
    precond: Optional[LinearMap] = None,
    cfg: Optional[KrylovConfig] = None,
    x0: Optional[FloatArray] = None,
) -> tuple[FloatArray, SolveReport]:
    """Solve with right-preconditioned flexible GMRES with restarts.

    Both the Arnoldi basis and the preconditioned vectors are kept, so the preconditioner
    may change from one application to the next. The residual history holds the Arnoldi
    residual estimates; entry i belongs to iteration i.

    Args:
        apply: Square operator.
        b: Right-hand side.
        precond: Flexible right preconditioner.
        cfg: Tolerance, cap, restart length and machine floor.
        x0: Initial guess (zero when omitted).

    Returns:
        The solution and its report. Stagnation over a full restart cycle ends the solve
        with ``stagnated = True``.
    """
    start = time.perf_counter()
    cfg = cfg or KrylovConfig()
    precond = precond or identity
    b = np.asarray(b, dtype=np.float64)
    n = b.size
    bnorm = float(np.linalg.norm(b))
    target = max(cfg.tol * bnorm, cfg.floor_factor * EPS * bnorm)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - apply(x) if x0 is not None else b.copy()
    beta = float(np.linalg.norm(r))
    history = [beta]
    converged = beta <= target
    stagnated = False
    total = 0

    while not converged and total < cfg.max_iter:
        m = min(cfg.restart, cfg.max_iter - total)
        basis = np.zeros((m + 1, n))
        search = np.zeros((m, n))
        hessenberg = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        basis[0] = r / beta
        cycle_start = beta
        k = 0
        for j in range(m):
            search[j] = precond(basis[j])
            w = apply(search[j])
            for i in range(j + 1):
                hessenberg[i, j] = w @ basis[i]
                w = w - hessenberg[i, j] * basis[i]
            h_next = float(np.linalg.norm(w))
            hessenberg[j + 1, j] = h_next
            for i in range(j):
                upper = cs[i] * hessenberg[i, j] + sn[i] * hessenberg[i + 1, j]
                hessenberg[i + 1, j] = -sn[i] * hessenberg[i, j] + cs[i] * hessenberg[i + 1, j]
                hessenberg[i, j] = upper
            denom = float(np.hypot(hessenberg[j, j], hessenberg[j + 1, j]))
            if denom == 0.0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j] = hessenberg[j, j] / denom
                sn[j] = hessenberg[j + 1, j] / denom
            hessenberg[j, j] = denom
            hessenberg[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            k = j + 1
            total += 1
            estimate = abs(float(g[j + 1]))
            history.append(estimate)
            logger.debug("fgmres iteration %d: residual %.3e", total, estimate)
            happy = h_next <= EPS * max(denom, 1.0)
            if estimate <= target or happy or total >= cfg.max_iter:
                break
            basis[j + 1] = w / h_next

        diag = np.abs(np.diag(hessenberg[:k, :k]))
        k_solve = k
        while k_solve > 0 and diag[k_solve - 1] == 0.0:
            k_solve -= 1
        if k_solve:
            y = sla.solve_triangular(hessenberg[:k_solve, :k_solve], g[:k_solve])
            x = x + search[:k_solve].T @ y
        r = b - apply(x)
        beta = float(np.linalg.norm(r))
        converged = history[-1] <= target or beta <= target
        if not converged and k == m and beta >= cycle_start * (1.0 - 1.0e-12):
            stagnated = True
            logger.warning("FGMRES stagnated after %d iterations (residual %.3e)", total, beta)
            break
        if beta == 0.0:
            converged = True

    report = SolveReport(
        method="fgmres",
        iterations=total,
        residuals=history,
        rhs_norm=bnorm,
        tol=cfg.tol,
        converged=converged,
        stagnated=stagnated,
        final_residual=beta,
        seconds=time.perf_counter() - start,
    )
    return x, report


class MultigridLevel(Protocol):
    """What the V-cycle needs from a level operator."""

    level: int
    size: int
    boundary: BoolArray

    def apply(self, u: FloatArray) -> FloatArray:
        """Apply the operator (identity on boundary DoFs)."""
        ...

    def diagonal(self) -> FloatArray:
        """Return the diagonal (1 on boundary DoFs)."""
        ...


class MultigridPreconditioner:
    """Geometric V-cycle with Chebyshev smoothing and a CG-SSOR coarsest solve."""

    def __init__(
        self,
        levels: Sequence[MultigridLevel],
        prolongate: Transfer,
        restrict: Transfer,
        coarse_matrix: sp.spmatrix,
        cfg: Optional[VCycleConfig] = None,
    ):
        """Set up smoothers and the coarsest solver.

        Args:
            levels: Level operators from the coarsest to the finest, consecutive levels.
            prolongate: ``prolongate(v, l)`` maps level l to l+1.
            restrict: ``restrict(v, l)`` maps level l to l-1.
            coarse_matrix: Assembled operator of the coarsest level.
            cfg: V-cycle configuration.

        Raises:
            HierarchyError: If the levels are empty or not consecutive.
        """
        if not levels:
            raise HierarchyError("The V-cycle needs at least one level")
        base = levels[0].level
        for i, op in enumerate(levels):
            if op.level != base + i:
                raise HierarchyError(f"Level {base + i} is missing from the hierarchy")
        self.cfg = cfg or VCycleConfig()
        self.levels = list(levels)
        self.prolongate = prolongate
        self.restrict = restrict
        self.coarse_matrix = sp.csr_matrix(coarse_matrix)
        self.coarse_precond = SsorPreconditioner(self.coarse_matrix, self.cfg.sor_omega)
        self.diagonals = [op.diagonal() for op in self.levels]
        self.lambdas = [0.0] + [
            estimate_lambda_max(
                op.apply,
                diag,
                mask=~op.boundary,
                iterations=self.cfg.power_iterations,
            )
            for op, diag in zip(self.levels[1:], self.diagonals[1:])
        ]
        for op, lam in zip(self.levels[1:], self.lambdas[1:]):
            logger.info("level %d: lambda_max(D^-1 A) ~ %.4f", op.level, lam)

    @property
    def finest(self) -> MultigridLevel:
        """Return the finest level operator."""
        return self.levels[-1]

    def coarse_solve(self, b: FloatArray) -> FloatArray:
        """Solve on the coarsest level with CG-SSOR."""
        if not np.any(b):
            return np.zeros_like(b)
        x, report = cg(
            lambda v: self.coarse_matrix @ v,
            b,
            precond=self.coarse_precond,
            tol=self.cfg.coarse_tol,
            max_iter=self.cfg.coarse_max_iter,
        )
        if not report.converged:
            logger.warning("Coarse solve stopped at residual %.3e", report.residuals[-1])
        return x

    def _smooth(self, i: int, b: FloatArray, x: FloatArray, steps: int) -> FloatArray:
        op = self.levels[i]
        lam = self.lambdas[i]
        interval = (self.cfg.interval_lower * lam, self.cfg.interval_upper * lam)
        for _ in range(steps):
            x = chebyshev_smooth(
                op.apply,
                self.diagonals[i],
                b,
                x,
                self.cfg.cheby_order,
                interval,
                mask=~op.boundary,
            )
        return x

    def _cycle(self, i: int, b: FloatArray, x: FloatArray) -> FloatArray:
        if i == 0:
            return self.coarse_solve(b)
        op = self.levels[i]
        coarse = self.levels[i - 1]
        x = np.array(x, dtype=np.float64)
        x[op.boundary] = b[op.boundary]
        x = self._smooth(i, b, x, self.cfg.pre_smooth)
        residual = b - op.apply(x)
        residual[op.boundary] = 0.0
        coarse_rhs = self.restrict(residual, op.level)
        coarse_rhs[coarse.boundary] = 0.0
        correction = self._cycle(i - 1, coarse_rhs, np.zeros(coarse.size))
        x = x + self.prolongate(correction, coarse.level)
        return self._smooth(i, b, x, self.cfg.post_smooth)

    def vcycle(self, b: FloatArray, x: Optional[FloatArray] = None) -> FloatArray:
        """Run one V-cycle on the finest level.

        Args:
            b: Right-hand side.
            x: Initial guess (zero when omitted).

        Returns:
            The updated iterate.
        """
        b = np.asarray(b, dtype=np.float64)
        x = np.zeros_like(b) if x is None else x
        return self._cycle(len(self.levels) - 1, b, x)

    __call__ = vcycle

    def iterate(
        self, b: FloatArray, x: Optional[FloatArray] = None, cycles: int = 10
    ) -> tuple[FloatArray, list[float]]:
        """Run stationary V-cycle iterations.

        Returns:
            The iterate and the residual norms before the first and after every cycle.
        """
        b = np.asarray(b, dtype=np.float64)
        x = np.zeros_like(b) if x is None else np.array(x, dtype=np.float64)
        history = [float(np.linalg.norm(b - self.finest.apply(x)))]
        for _ in range(cycles):
            x = self.vcycle(b, x)
            history.append(float(np.linalg.norm(b - self.finest.apply(x))))
        return x, history
