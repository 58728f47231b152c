"""Scalar diffusion validation solve: -div(eta grad u) = 1, u = 0 on the boundary."""

import logging
import time
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from .coarsening import (
    CoarseningPlan,
    OperatorKind,
    build_agca_hierarchy,
    build_multigrid,
    plan_for_mode,
)
from .fem import CoefficientEval, quadrature
from .mesh import MeshHierarchy
from .models import RunConfig, SolveReport
from .problems import scalar_load, viscosity
from .solvers import fgmres
from .stokes import build_hierarchy

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]


def _unit_source(x: FloatArray, y: FloatArray) -> FloatArray:
    return np.ones(np.broadcast(x, y).shape)


def solve_diffusion(
    config: RunConfig,
    hierarchy: Optional[MeshHierarchy] = None,
    plan: Optional[CoarseningPlan] = None,
) -> tuple[FloatArray, SolveReport]:
    """Solve the scalar problem with FGMRES preconditioned by one AGCA V-cycle.

    The coefficient is constant 1, or the viscosity of ``problem.coefficient_family``.

    Returns:
        The finest-level solution and the solve report.
    """
    start = time.perf_counter()
    hierarchy = hierarchy or build_hierarchy(config)
    source = viscosity(config.problem)
    eta = CoefficientEval(config.problem.eval_mode, source, hierarchy)
    if plan is None:
        plan = plan_for_mode(config.coarsening.mode, source, hierarchy, config.coarsening.nu)
    rule = quadrature(config.solver.quadrature_degree)
    levels = build_agca_hierarchy(hierarchy, eta, plan, OperatorKind.DIFFUSION, rule)
    multigrid = build_multigrid(hierarchy, levels, config.solver.vcycle)
    b = scalar_load(hierarchy, hierarchy.max_level, _unit_source)
    setup = time.perf_counter() - start

    u, report = fgmres(levels[-1].apply, b, multigrid.vcycle, config.solver.krylov)
    report = report.model_copy(
        update={"timings": {"setup": setup, "solve": report.seconds}, "c_agca": plan.c_agca}
    )
    logger.info(
        "Diffusion solve: %d iterations, converged=%s", report.iterations, report.converged
    )
    return u, report
