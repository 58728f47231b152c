"""Coarse-grid operators: DCA, element-wise distributed GCA and their adaptive blend.

Every level operator is the additive composition of element matrices over all macro
elements. On the finest level, and on DCA macros of coarser levels, the element matrices are
recomputed from the geometry and the viscosity at every application. On GCA macros of the
coarser levels they are read from a ``GcaStore``, built recursively from the finest level
down by local triple products with the local interpolation matrices.

Homogeneous Dirichlet conditions are applied at application time: boundary components of
the input are zeroed before the element sum and boundary components of the output are set
to the input. Element matrices are never masked, so the interior block of every Galerkin
level operator equals the Galerkin product of the interior blocks.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import scipy.sparse as sp
import yaml
from numpy.typing import NDArray

from .fem import (
    CoefficientEval,
    LocalMatrix,
    QuadratureRule,
    Source,
    diffusion_kernel,
    local_diffusion,
    local_viscous,
    p1_geometry,
    quadrature,
    viscous_kernel,
)
from .mesh import DOWN, UP, MeshHierarchy, MicroElement, child_table, reference_elements
from .models import CoarseningMode, VCycleConfig
from .solvers import MultigridPreconditioner
from .transfer import interp_table, prolongate, restrict, vector_interp_table

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int64]
BoolArray = NDArray[np.bool_]


class BuildOrderError(RuntimeError):
    """Raised when a Galerkin level is requested before its finer source exists."""

    pass


class OperatorError(ValueError):
    """Raised for vectors that do not match a level operator."""

    pass


class OperatorKind(str, Enum):
    """Which bilinear form a level operator discretizes."""

    DIFFUSION = "diffusion"
    VISCOUS = "viscous"

    @property
    def ncomp(self) -> int:
        """Return the number of field components."""
        return 1 if self is OperatorKind.DIFFUSION else 2

    @property
    def n_local(self) -> int:
        """Return the local matrix size."""
        return 3 * self.ncomp

    def interp(self, kind: int) -> FloatArray:
        """Return the local interpolation matrices (4, n, n) of a parent orientation."""
        if self is OperatorKind.DIFFUSION:
            return interp_table(kind)
        return vector_interp_table(kind)


@dataclass(frozen=True, eq=False)
class CoarseningPlan:
    """Partition of the macro elements into DCA and GCA macros."""

    nu: float
    n_macros: int
    gca_macros: frozenset[int]
    max_gradient: Optional[FloatArray] = None

    @classmethod
    def pure_dca(cls, n_macros: int) -> "CoarseningPlan":
        """Return a plan without Galerkin macros."""
        return cls(nu=float("inf"), n_macros=n_macros, gca_macros=frozenset())

    @classmethod
    def full_gca(cls, n_macros: int) -> "CoarseningPlan":
        """Return a plan with every macro Galerkin-coarsened."""
        return cls(nu=0.0, n_macros=n_macros, gca_macros=frozenset(range(n_macros)))

    @property
    def gca_array(self) -> IntArray:
        """Return the sorted GCA macro indices."""
        return np.array(sorted(self.gca_macros), dtype=np.int64)

    @property
    def dca_array(self) -> IntArray:
        """Return the sorted DCA macro indices."""
        return np.array(
            [m for m in range(self.n_macros) if m not in self.gca_macros], dtype=np.int64
        )

    @property
    def dca_macros(self) -> frozenset[int]:
        """Return the complement of the GCA set."""
        return frozenset(range(self.n_macros)) - self.gca_macros

    @property
    def c_agca(self) -> float:
        """Return the fraction of Galerkin-coarsened macro elements."""
        return len(self.gca_macros) / self.n_macros if self.n_macros else 0.0


def macro_gradients(eta: Source, hierarchy: MeshHierarchy) -> FloatArray:
    """Return per macro the largest finest-level gradient norm of the P1 interpolant of eta.

    Args:
        eta: Analytic viscosity.
        hierarchy: The mesh hierarchy.

    Returns:
        Array of shape (n_macros,).
    """
    level = hierarchy.max_level
    coords = hierarchy.coordinates(level)
    nodal = np.asarray(eta(coords[:, 0], coords[:, 1]), dtype=np.float64)
    nodal = np.broadcast_to(nodal, coords.shape[:1])
    values = nodal[hierarchy.cells(level)]
    grads, _ = p1_geometry(hierarchy.element_coordinates(level))
    jumps = values[..., 1:] - values[..., :1]
    gradient = np.einsum("mea,meai->mei", jumps, grads[..., 1:, :])
    return np.asarray(np.linalg.norm(gradient, axis=-1).max(axis=1), dtype=np.float64)


def select_macros(eta: Source, hierarchy: MeshHierarchy, nu: float) -> CoarseningPlan:
    """Tag macros whose interpolated viscosity gradient exceeds nu as GCA.

    Args:
        eta: Analytic viscosity.
        hierarchy: The mesh hierarchy.
        nu: Threshold; a macro is GCA iff its maximal gradient norm is strictly above it.

    Returns:
        The coarsening plan.
    """
    if nu < 0.0:
        raise ValueError(f"nu must be >= 0, got {nu}")
    gradients = macro_gradients(eta, hierarchy)
    gca = frozenset(int(m) for m in np.flatnonzero(gradients > nu))
    plan = CoarseningPlan(
        nu=nu, n_macros=hierarchy.n_macros, gca_macros=gca, max_gradient=gradients
    )
    logger.info(
        "nu=%g: %d of %d macros GCA (c_agca=%.4f)", nu, len(gca), plan.n_macros, plan.c_agca
    )
    return plan


def plan_for_mode(
    mode: CoarseningMode, eta: Source, hierarchy: MeshHierarchy, nu: float
) -> CoarseningPlan:
    """Return the plan of a coarsening mode: all DCA, adaptive, or all GCA."""
    if mode is CoarseningMode.DCA:
        return CoarseningPlan.pure_dca(hierarchy.n_macros)
    if mode is CoarseningMode.GCA:
        return CoarseningPlan.full_gca(hierarchy.n_macros)
    return select_macros(eta, hierarchy, nu)


def level_local_matrices(
    hierarchy: MeshHierarchy,
    eta: CoefficientEval,
    kind: OperatorKind,
    level: int,
    macros: IntArray,
    rule: QuadratureRule,
) -> FloatArray:
    """Return direct-discretization element matrices of the given macros on one level.

    Returns:
        Array of shape (len(macros), 4**level, n, n).
    """
    coords = hierarchy.element_coordinates(level)[macros]
    cells = hierarchy.cells(level)[macros]
    eta_bar = eta.integrated(level, coords, cells, rule)
    if kind is OperatorKind.DIFFUSION:
        return diffusion_kernel(coords, eta_bar)
    return viscous_kernel(coords, eta_bar)


def dca_local(
    element: MicroElement,
    eta: CoefficientEval,
    kind: OperatorKind = OperatorKind.DIFFUSION,
    rule: Optional[QuadratureRule] = None,
) -> LocalMatrix:
    """Return the re-discretized element matrix of a micro element on its own level."""
    if kind is OperatorKind.DIFFUSION:
        return local_diffusion(element, eta, rule)
    return local_viscous(element, eta, rule)


class GcaStore:
    """Galerkin element matrices of the GCA macros on levels 0..L-1."""

    def __init__(self, hierarchy: MeshHierarchy, kind: OperatorKind, plan: CoarseningPlan):
        """Initialize an empty store.

        Args:
            hierarchy: The mesh hierarchy.
            kind: Operator kind of the stored matrices.
            plan: Plan naming the GCA macros.
        """
        self.hierarchy = hierarchy
        self.kind = kind
        self.macros = plan.gca_array
        self._position = {int(m): i for i, m in enumerate(self.macros)}
        self._levels: dict[int, FloatArray] = {}

    def has_level(self, level: int) -> bool:
        """Return True if the level has been built."""
        return level in self._levels

    def level(self, level: int) -> FloatArray:
        """Return the stored matrices of a level, shape (n_gca, 4**l, n, n).

        Raises:
            BuildOrderError: If the level has not been built.
        """
        if level not in self._levels:
            raise BuildOrderError(f"GCA level {level} has not been built")
        return self._levels[level]

    def set_level(self, level: int, matrices: FloatArray) -> None:
        """Store the matrices of a level."""
        expected = (len(self.macros), 4**level, self.kind.n_local, self.kind.n_local)
        if matrices.shape != expected:
            raise OperatorError(f"Expected GCA matrices of shape {expected}, got {matrices.shape}")
        matrices.setflags(write=False)
        self._levels[level] = matrices

    def matrix(self, macro: int, level: int, index: int) -> FloatArray:
        """Return the stored matrix of one micro element.

        Raises:
            KeyError: If the macro is not a GCA macro.
        """
        return self.level(level)[self._position[macro], index]

    def is_complete(self) -> bool:
        """Return True when every level below the finest is present."""
        if len(self.macros) == 0:
            return True
        return all(level in self._levels for level in range(self.hierarchy.max_level))

    @property
    def entries_per_level(self) -> dict[int, int]:
        """Return the number of stored reals per level."""
        return {level: int(m.size) for level, m in sorted(self._levels.items())}

    @property
    def stored_entries(self) -> int:
        """Return the total number of stored reals."""
        return sum(self.entries_per_level.values())


def build_gca_level(
    store: GcaStore,
    eta: CoefficientEval,
    level: int,
    rule: Optional[QuadratureRule] = None,
) -> None:
    """Compute the Galerkin element matrices of one level from the next finer level.

    Level L-1 is built from finest-level element matrices computed on the fly; every other
    level from the stored matrices of level l+1.

    Raises:
        BuildOrderError: If the finer source is missing or the level is out of range.
    """
    hierarchy = store.hierarchy
    finest = hierarchy.max_level
    if not 0 <= level < finest:
        raise BuildOrderError(f"GCA levels are 0..{finest - 1}, got {level}")
    rule = rule or quadrature(2)
    if level == finest - 1:
        fine = level_local_matrices(hierarchy, eta, store.kind, finest, store.macros, rule)
    elif store.has_level(level + 1):
        fine = store.level(level + 1)
    else:
        raise BuildOrderError(f"GCA level {level} needs level {level + 1} first")

    _, kinds = reference_elements(level)
    tables = {UP: store.kind.interp(UP), DOWN: store.kind.interp(DOWN)}
    interp = np.stack([tables[int(k)] for k in kinds])
    fine_children = fine[:, child_table(level)]
    coarse = np.einsum("ecia,gecij,ecjb->geab", interp, fine_children, interp, optimize=True)
    store.set_level(level, np.ascontiguousarray(coarse))


def build_gca_store(
    hierarchy: MeshHierarchy,
    eta: CoefficientEval,
    kind: OperatorKind,
    plan: CoarseningPlan,
    rule: Optional[QuadratureRule] = None,
) -> GcaStore:
    """Build all Galerkin levels from L-1 down to 0."""
    store = GcaStore(hierarchy, kind, plan)
    if len(store.macros) == 0:
        return store
    for level in range(hierarchy.max_level - 1, -1, -1):
        build_gca_level(store, eta, level, rule)
    logger.info(
        "GCA store: %d macros, %d stored reals", len(store.macros), store.stored_entries
    )
    return store


class LevelOperator:
    """The matrix-free AGCA operator of one level."""

    def __init__(
        self,
        hierarchy: MeshHierarchy,
        level: int,
        kind: OperatorKind,
        eta: CoefficientEval,
        plan: CoarseningPlan,
        store: GcaStore,
        rule: Optional[QuadratureRule] = None,
    ):
        """Initialize the level operator.

        Raises:
            BuildOrderError: If a GCA macro is present on a coarse level missing from the store.
        """
        hierarchy.check_level(level)
        self.hierarchy = hierarchy
        self.level = level
        self.kind = kind
        self.eta = eta
        self.plan = plan
        self.store = store
        self.rule = rule or quadrature(2)
        self.galerkin = level < hierarchy.max_level and len(plan.gca_macros) > 0
        if self.galerkin and not store.has_level(level):
            raise BuildOrderError(f"GCA store is missing level {level}")
        if kind is OperatorKind.DIFFUSION:
            self.boundary = hierarchy.boundary_mask(level)
            self.dofs = hierarchy.cells(level)
        else:
            self.boundary = hierarchy.vector_boundary_mask(level)
            self.dofs = hierarchy.vector_cells(level)
        self.size = int(self.boundary.size)

    @property
    def interior(self) -> BoolArray:
        """Return the mask of non-boundary DoFs."""
        return ~self.boundary

    def local_matrices(self) -> FloatArray:
        """Return the element matrices of all macros on this level, shape (M, 4**l, n, n)."""
        all_macros = np.arange(self.hierarchy.n_macros)
        if not self.galerkin:
            return level_local_matrices(
                self.hierarchy, self.eta, self.kind, self.level, all_macros, self.rule
            )
        n = self.kind.n_local
        out = np.empty((self.hierarchy.n_macros, 4**self.level, n, n))
        dca = self.plan.dca_array
        if dca.size:
            out[dca] = level_local_matrices(
                self.hierarchy, self.eta, self.kind, self.level, dca, self.rule
            )
        out[self.store.macros] = self.store.level(self.level)
        return out

    def apply(self, u: FloatArray) -> FloatArray:
        """Apply the operator with the Dirichlet identity on boundary DoFs.

        Raises:
            OperatorError: If u does not match the level.
        """
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (self.size,):
            raise OperatorError(f"Expected a vector of size {self.size}, got {u.shape}")
        masked = np.where(self.boundary, 0.0, u)
        local = np.einsum("...ij,...j->...i", self.local_matrices(), masked[self.dofs])
        v = np.bincount(self.dofs.ravel(), weights=local.ravel(), minlength=self.size)
        v[self.boundary] = u[self.boundary]
        return v

    __call__ = apply

    def diagonal(self) -> FloatArray:
        """Return the diagonal (sum of local diagonals, 1 on boundary DoFs)."""
        local = np.diagonal(self.local_matrices(), axis1=-2, axis2=-1)
        d = np.bincount(self.dofs.ravel(), weights=local.ravel(), minlength=self.size)
        d[self.boundary] = 1.0
        return d


def build_agca_hierarchy(
    hierarchy: MeshHierarchy,
    eta: CoefficientEval,
    plan: CoarseningPlan,
    kind: OperatorKind = OperatorKind.DIFFUSION,
    rule: Optional[QuadratureRule] = None,
) -> list[LevelOperator]:
    """Build the level operators 0..L of an AGCA hierarchy.

    Returns:
        Level operators ordered from coarsest to finest.
    """
    store = build_gca_store(hierarchy, eta, kind, plan, rule)
    if not store.is_complete():
        raise BuildOrderError("GCA store is incomplete")
    return [
        LevelOperator(hierarchy, level, kind, eta, plan, store, rule)
        for level in range(hierarchy.max_level + 1)
    ]


def apply_level(op: LevelOperator, u: FloatArray) -> FloatArray:
    """Apply a level operator to a level vector."""
    return op.apply(u)


def assemble_sparse(op: LevelOperator, dirichlet: bool = True) -> sp.csr_matrix:
    """Assemble a level operator into a sparse matrix.

    Args:
        op: The level operator.
        dirichlet: Apply the boundary identity (matches ``apply``); otherwise return the raw
            additive sum of the element matrices.
    """
    mats = op.local_matrices()
    rows = np.broadcast_to(op.dofs[..., :, None], mats.shape).ravel()
    cols = np.broadcast_to(op.dofs[..., None, :], mats.shape).ravel()
    matrix = sp.coo_matrix((mats.ravel(), (rows, cols)), shape=(op.size, op.size)).tocsr()
    if dirichlet:
        keep = sp.diags(op.interior.astype(np.float64))
        matrix = (keep @ matrix @ keep + sp.diags(op.boundary.astype(np.float64))).tocsr()
    matrix.eliminate_zeros()
    return matrix


def dump_plan(plan: CoarseningPlan, store: Optional[GcaStore] = None) -> str:
    """Return the plan and per-level stored matrix counts as YAML text."""
    data: dict[str, object] = {
        "nu": float(plan.nu),
        "n_macros": plan.n_macros,
        "c_agca": round(plan.c_agca, 6),
        "gca_macros": [int(m) for m in plan.gca_array],
    }
    if store is not None:
        n = store.kind.n_local
        data["stored_matrices"] = {
            level: count // (n * n) for level, count in store.entries_per_level.items()
        }
        data["stored_entries"] = store.stored_entries
    return yaml.safe_dump(data, default_flow_style=None, sort_keys=False)


def build_multigrid(
    hierarchy: MeshHierarchy,
    levels: list[LevelOperator],
    cfg: Optional[VCycleConfig] = None,
) -> MultigridPreconditioner:
    """Wire level operators min_level..L into a V-cycle preconditioner.

    Args:
        hierarchy: The mesh hierarchy.
        levels: Level operators 0..L from ``build_agca_hierarchy``.
        cfg: V-cycle configuration; ``min_level`` selects the coarsest level.
    """
    cfg = cfg or VCycleConfig()
    active = levels[cfg.min_level :]

    def prolongate_level(v: FloatArray, level: int) -> FloatArray:
        return prolongate(hierarchy, v, level)

    def restrict_level(v: FloatArray, level: int) -> FloatArray:
        return restrict(hierarchy, v, level)

    coarse = assemble_sparse(active[0])
    logger.info(
        "V-cycle levels %d..%d, coarsest operator %d x %d (%d nonzeros)",
        active[0].level,
        active[-1].level,
        coarse.shape[0],
        coarse.shape[1],
        coarse.nnz,
    )
    return MultigridPreconditioner(active, prolongate_level, restrict_level, coarse, cfg)
