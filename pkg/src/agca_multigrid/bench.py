"""Experiment drivers.

The drivers expand a RunConfig over a parameter grid, run one solve per configuration and
collect ExperimentResult rows. A failing run is recorded with its error text and the sweep
continues. Rows come back in grid order regardless of the number of worker threads.
"""

import logging
import time
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, TypeVar

import numpy as np

from .coarsening import CoarseningPlan, OperatorKind, macro_gradients, plan_for_mode
from .memory import BYTES_PER_REAL, gca_stored_entries
from .mesh import MeshHierarchy, build_macro_grid, refine_hierarchy
from .models import (
    CagcaGrid,
    CoarseningMode,
    ExperimentResult,
    NuSweepGrid,
    RunConfig,
    SweepGrid,
)
from .poisson import solve_diffusion
from .problems import viscosity
from .stokes import build_hierarchy, build_stokes_system, solve_stokes

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

# Families with a sharp viscosity jump
INTERFACE_FAMILIES = frozenset({1, 2, 4, 6})


class SweepError(ValueError):
    """Raised for an empty or inconsistent experiment grid."""

    pass


def _map(func: Callable[[T], R], items: Sequence[T], threads: int) -> list[R]:
    if threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))


def _result(config: RunConfig, plan: Optional[CoarseningPlan] = None) -> ExperimentResult:
    problem = config.problem
    return ExperimentResult(
        family=problem.family,
        dynamic_ratio=problem.dynamic_ratio,
        omega=problem.omega,
        n_sinkers=problem.n_sinkers,
        eval_mode=problem.eval_mode,
        coarsening_mode=config.coarsening.mode,
        nu=config.coarsening.nu,
        macro_nx=config.mesh.nx,
        levels=config.mesh.levels,
        c_agca=plan.c_agca if plan is not None else 0.0,
        gca_macros=len(plan.gca_macros) if plan is not None else 0,
        stored_bytes=(
            BYTES_PER_REAL * gca_stored_entries(plan, config.mesh.levels)
            if plan is not None
            else 0
        ),
    )


def run_experiment(
    config: RunConfig,
    hierarchy: Optional[MeshHierarchy] = None,
    plan: Optional[CoarseningPlan] = None,
) -> ExperimentResult:
    """Solve one configuration and summarize it; errors are recorded, not raised."""
    start = time.perf_counter()
    try:
        hierarchy = hierarchy or build_hierarchy(config)
        if plan is None:
            plan = plan_for_mode(
                config.coarsening.mode,
                viscosity(config.problem),
                hierarchy,
                config.coarsening.nu,
            )
        result = _result(config, plan)
        if config.problem.is_poisson:
            _, report = solve_diffusion(config, hierarchy, plan)
            stored = gca_stored_entries(plan, hierarchy.max_level, OperatorKind.DIFFUSION)
        else:
            system = build_stokes_system(config, hierarchy, plan)
            _, _, report = solve_stokes(config, system)
            stored = system.levels[0].store.stored_entries
        return result.model_copy(
            update={
                "iterations": report.iterations,
                "converged": report.converged,
                "stored_bytes": BYTES_PER_REAL * stored,
                "seconds": time.perf_counter() - start,
            }
        )
    except Exception as exc:
        logger.error("Run failed (%s): %s", config.problem.family, exc)
        return _result(config, plan).model_copy(
            update={"error": str(exc), "seconds": time.perf_counter() - start}
        )


def _variant(base: RunConfig, update: dict[str, dict[str, object]]) -> RunConfig:
    data = base.model_dump()
    for section, values in update.items():
        data[section].update(values)
    return RunConfig.model_validate(data)


def run_convergence_sweep(config: RunConfig) -> list[ExperimentResult]:
    """Run the cartesian grid of dynamic ratio, omega, sinkers, evaluation and coarsening.

    Raises:
        SweepError: If the grid is empty.
    """
    grid = config.sweep or SweepGrid()
    combos = grid.combinations()
    if not combos:
        raise SweepError("Sweep grid is empty")
    hierarchy = build_hierarchy(config)
    configs = [
        _variant(
            config,
            {
                "problem": {
                    "dynamic_ratio": dr,
                    "omega": omega,
                    "n_sinkers": n_sinkers,
                    "eval_mode": eval_mode,
                },
                "coarsening": {"mode": mode},
            },
        )
        for dr, omega, n_sinkers, eval_mode, mode in combos
    ]
    for variant in configs:
        variant.solver.krylov.max_iter = grid.cap
    logger.info("Convergence sweep: %d runs", len(configs))
    return _map(lambda c: run_experiment(c, hierarchy), configs, config.threads)


def plans_for_thresholds(
    hierarchy: MeshHierarchy, config: RunConfig, nus: Sequence[float]
) -> list[CoarseningPlan]:
    """Return AGCA plans for several thresholds from one gradient evaluation."""
    gradients = macro_gradients(viscosity(config.problem), hierarchy)
    return [
        CoarseningPlan(
            nu=nu,
            n_macros=hierarchy.n_macros,
            gca_macros=frozenset(int(m) for m in np.flatnonzero(gradients > nu)),
            max_gradient=gradients,
        )
        for nu in nus
    ]


def run_nu_sweep(config: RunConfig) -> list[ExperimentResult]:
    """Vary the AGCA threshold and record GCA macros, stored bytes and iterations.

    Raises:
        SweepError: If the threshold grid is empty.
    """
    grid = config.nu_sweep or NuSweepGrid()
    if not grid.nus:
        raise SweepError("nu grid is empty")
    hierarchy = build_hierarchy(config)
    plans = plans_for_thresholds(hierarchy, config, grid.nus)
    configs = [
        _variant(config, {"coarsening": {"mode": CoarseningMode.AGCA, "nu": nu}})
        for nu in grid.nus
    ]
    if grid.solve:
        results = _map(
            lambda pair: run_experiment(pair[0], hierarchy, pair[1]),
            list(zip(configs, plans)),
            config.threads,
        )
    else:
        results = [_result(c, plan) for c, plan in zip(configs, plans)]
    counts = [r.gca_macros for r in sorted(results, key=lambda r: r.nu)]
    if any(b > a for a, b in zip(counts, counts[1:])):
        logger.warning("GCA macro count is not monotone in nu: %s", counts)
    return results


def _has_interface(config: RunConfig) -> bool:
    problem = config.problem
    family = problem.coefficient_family if problem.is_poisson else problem.family
    return (
        config.coarsening.mode is CoarseningMode.AGCA
        and problem.dynamic_ratio > 1.0
        and family in INTERFACE_FAMILIES
    )


def run_cagca_study(config: RunConfig) -> list[ExperimentResult]:
    """Record c_agca over a sequence of macro grid sizes at fixed L.

    For a sharp interface under AGCA, c_agca must strictly decrease with the macro grid
    size; a violation is logged as a warning.

    Raises:
        SweepError: If no macro sizes are given.
    """
    grid = config.cagca or CagcaGrid()
    if not grid.macro_sizes:
        raise SweepError("Macro size list is empty")
    source = viscosity(config.problem)

    def one(size: int) -> ExperimentResult:
        variant = _variant(config, {"mesh": {"nx": size, "ny": size}})
        hierarchy = refine_hierarchy(build_macro_grid(size, size), variant.mesh.levels)
        plan = plan_for_mode(variant.coarsening.mode, source, hierarchy, variant.coarsening.nu)
        if grid.solve:
            return run_experiment(variant, hierarchy, plan)
        return _result(variant, plan)

    results = _map(one, list(grid.macro_sizes), config.threads)
    for r in results:
        logger.info("macro %dx%d: c_agca=%.4f", r.macro_nx, r.macro_nx, r.c_agca)
    if _has_interface(config):
        values = [r.c_agca for r in sorted(results, key=lambda r: r.macro_nx)]
        if any(b >= a for a, b in zip(values, values[1:])):
            logger.warning("c_agca does not strictly decrease with the macro grid: %s", values)
    return results
