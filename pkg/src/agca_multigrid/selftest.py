"""Oracle and invariant checks behind the ``selftest`` command.

Every check builds its own small mesh, compares a computed quantity against an independent
reference and returns a CheckResult. A check that raises is reported as failed.
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import norm as sparse_norm

from .coarsening import (
    CoarseningPlan,
    OperatorKind,
    assemble_sparse,
    build_agca_hierarchy,
    level_local_matrices,
)
from .fem import CoefficientEval, quadrature
from .memory import memory_model_3d
from .mesh import MeshHierarchy, build_macro_grid, refine_hierarchy
from .models import EvalMode, ProblemConfig
from .problems import viscosity
from .transfer import prolongate, prolongation_matrix, restrict

logger = logging.getLogger(__name__)

GALERKIN_TOL = 1.0e-12
AFFINE_TOL = 1.0e-14
ADJOINT_TOL = 1.0e-13

MEMORY_BOUNDS: dict[str, tuple[float, float]] = {
    "mem_a": (86.3, 86.7),
    "mem_k": (89.3, 89.7),
    "sparse_gca": (10.6, 11.0),
    "elementwise_gca": (33.5, 34.5),
    "stencil": (5.3, 5.5),
}


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one self-test check."""

    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""


def _hierarchy(nx: int = 1, ny: int = 1, levels: int = 2) -> MeshHierarchy:
    return refine_hierarchy(build_macro_grid(nx, ny), levels)


def _relative_frobenius(a: sp.spmatrix, b: sp.spmatrix) -> float:
    scale = max(sparse_norm(b), np.finfo(np.float64).tiny)
    return float(sparse_norm(a - b) / scale)


def galerkin_error(kind: OperatorKind, dynamic_ratio: float = 1.0e4) -> float:
    """Return the worst relative Frobenius error between stored GCA levels and P^T A P.

    Uses the unaligned-square viscosity on a two-macro mesh with L = 2, every macro
    Galerkin-coarsened, and compares the raw element sums (no boundary identity).
    """
    hierarchy = _hierarchy()
    problem = ProblemConfig(family=2, dynamic_ratio=dynamic_ratio)
    eta = CoefficientEval(EvalMode.ANALYTIC, viscosity(problem), hierarchy)
    plan = CoarseningPlan.full_gca(hierarchy.n_macros)
    levels = build_agca_hierarchy(hierarchy, eta, plan, kind)
    worst = 0.0
    for level in range(hierarchy.max_level):
        P = prolongation_matrix(hierarchy, level, kind.ncomp)
        fine = assemble_sparse(levels[level + 1], dirichlet=False)
        coarse = assemble_sparse(levels[level], dirichlet=False)
        worst = max(worst, _relative_frobenius(coarse, (P.T @ fine @ P).tocsr()))
    return worst


def constant_collapse_error(kind: OperatorKind) -> float:
    """Return the worst entrywise relative gap between stored GCA and DCA matrices, eta = 1."""
    hierarchy = _hierarchy(levels=3)
    problem = ProblemConfig(family="poisson")
    eta = CoefficientEval(EvalMode.ANALYTIC, viscosity(problem), hierarchy)
    plan = CoarseningPlan.full_gca(hierarchy.n_macros)
    levels = build_agca_hierarchy(hierarchy, eta, plan, kind)
    store = levels[0].store
    rule = quadrature(2)
    worst = 0.0
    for level in range(hierarchy.max_level):
        stored = store.level(level)
        direct = level_local_matrices(hierarchy, eta, kind, level, store.macros, rule)
        scale = float(np.max(np.abs(direct)))
        worst = max(worst, float(np.max(np.abs(stored - direct))) / scale)
    return worst


def affine_error() -> float:
    """Return the largest deviation of a prolongated affine function from its exact values."""
    hierarchy = _hierarchy(nx=2, ny=3, levels=3)
    worst = 0.0
    for level in range(hierarchy.max_level):
        coarse = hierarchy.coordinates(level)
        fine = hierarchy.coordinates(level + 1)
        values = 0.3 - 1.7 * coarse[:, 0] + 0.9 * coarse[:, 1]
        exact = 0.3 - 1.7 * fine[:, 0] + 0.9 * fine[:, 1]
        worst = max(worst, float(np.max(np.abs(prolongate(hierarchy, values, level) - exact))))
    return worst


def adjoint_error(pairs: int = 10, seed: int = 0) -> float:
    """Return the worst relative gap of <R f, c> and <f, P c> over random pairs."""
    hierarchy = _hierarchy(nx=2, ny=2, levels=3)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(pairs):
        level = int(rng.integers(0, hierarchy.max_level))
        ncomp = int(rng.integers(1, 3))
        c = rng.standard_normal(ncomp * hierarchy.num_vertices(level))
        f = rng.standard_normal(ncomp * hierarchy.num_vertices(level + 1))
        lhs = float(restrict(hierarchy, f, level + 1) @ c)
        rhs = float(f @ prolongate(hierarchy, c, level))
        scale = max(abs(lhs), abs(rhs), 1.0)
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst


def memory_constants() -> CheckResult:
    """Check the five 3D memory constants against their accepted intervals."""
    model = memory_model_3d()
    values = {name: float(getattr(model, name)) for name in MEMORY_BOUNDS}
    outside = [
        f"{name}={value:.2f}"
        for name, value in values.items()
        if not MEMORY_BOUNDS[name][0] <= value <= MEMORY_BOUNDS[name][1]
    ]
    detail = ", ".join(f"{name}={value:.2f}" for name, value in values.items())
    return CheckResult(
        name="memory-model",
        passed=not outside,
        value=float(len(outside)),
        threshold=0.0,
        detail=detail,
    )


def _threshold_check(name: str, compute: Callable[[], float], tol: float) -> CheckResult:
    value = compute()
    return CheckResult(name=name, passed=value <= tol, value=value, threshold=tol)


CHECKS: dict[str, Callable[[], CheckResult]] = {
    "galerkin-diffusion": lambda: _threshold_check(
        "galerkin-diffusion", lambda: galerkin_error(OperatorKind.DIFFUSION), GALERKIN_TOL
    ),
    "galerkin-viscous": lambda: _threshold_check(
        "galerkin-viscous", lambda: galerkin_error(OperatorKind.VISCOUS), GALERKIN_TOL
    ),
    "dca-gca-diffusion": lambda: _threshold_check(
        "dca-gca-diffusion",
        lambda: constant_collapse_error(OperatorKind.DIFFUSION),
        GALERKIN_TOL,
    ),
    "dca-gca-viscous": lambda: _threshold_check(
        "dca-gca-viscous",
        lambda: constant_collapse_error(OperatorKind.VISCOUS),
        GALERKIN_TOL,
    ),
    "transfer-affine": lambda: _threshold_check("transfer-affine", affine_error, AFFINE_TOL),
    "transfer-adjoint": lambda: _threshold_check("transfer-adjoint", adjoint_error, ADJOINT_TOL),
    "memory-model": memory_constants,
}


def run_selftest(names: list[str] | None = None) -> list[CheckResult]:
    """Run the named checks (all by default).

    Raises:
        KeyError: For an unknown check name.
    """
    selected = names or list(CHECKS)
    results = []
    for name in selected:
        check = CHECKS[name]
        try:
            result = check()
        except Exception as exc:
            logger.error("Check %s raised: %s", name, exc)
            result = CheckResult(
                name=name, passed=False, value=float("nan"), threshold=0.0, detail=str(exc)
            )
        logger.info("%s: %s (%.3e)", name, "pass" if result.passed else "FAIL", result.value)
        results.append(result)
    return results
