"""Memory accounting: the 3D storage model and the measured 2D tally.

Both are expressed in fine-grid vectors N_L, the number of velocity plus pressure unknowns
on the finest level.
"""

from typing import TYPE_CHECKING, Optional

import scipy.sparse as sp

from .coarsening import CoarseningPlan, OperatorKind, assemble_sparse
from .mesh import MeshHierarchy
from .models import MemoryModel3D, MemoryTally2D

if TYPE_CHECKING:
    from .stokes import StokesSystem

BYTES_PER_REAL = 8
DEFAULT_C_U = 0.95
A_ROW_WORDS = 45 * 2 + 1
BT_ROW_WORDS = 15 * 2 + 1
C_U_2D = 8.0 / 9.0
A_ROW_WORDS_2D = 14 * 2 + 1


def exact_c_u() -> float:
    """Return the velocity fraction of N_L in the limit of infinite refinement (3D)."""
    return 1.0 - 1.0 / 24.0


def memory_model_3d(
    n_fill_in: float = 1.0,
    n_restart: int = 30,
    c_agca: float = 1.0,
    c_u: float = DEFAULT_C_U,
) -> MemoryModel3D:
    """Evaluate the 3D memory model in units of fine-grid vectors N_L.

    Args:
        n_fill_in: Fill-in factor of sparse Galerkin products.
        n_restart: FGMRES restart length.
        c_agca: Fraction of Galerkin-coarsened macros.
        c_u: Velocity fraction of N_L.

    Returns:
        The model with one column per storage strategy.

    Raises:
        ValueError: For out-of-range inputs.
    """
    if n_fill_in < 1.0:
        raise ValueError(f"n_fill_in must be >= 1, got {n_fill_in}")
    if n_restart < 0:
        raise ValueError(f"n_restart must be >= 0, got {n_restart}")
    if not 0.0 <= c_agca <= 1.0:
        raise ValueError(f"c_agca must be in [0, 1], got {c_agca}")
    if not 0.0 < c_u < 1.0:
        raise ValueError(f"c_u must be in (0, 1), got {c_u}")

    mem_a = A_ROW_WORDS * c_u
    mem_k = mem_a + 2 * BT_ROW_WORDS * (1.0 - c_u)
    sparse_gca = n_fill_in * mem_a / 8.0
    elementwise = 3 * 16 * 6 / 8.0 * c_u
    stencil = 3 * 15 / 8.0 * c_u

    common = {"pde": 2.0, "fgmres": 2.0 + 2.0 * n_restart, "preconditioner": 4.0}
    coarse = {
        "matrix": sparse_gca,
        "sparse_gca": sparse_gca,
        "agca": c_agca * elementwise,
        "agca_stencil": c_agca * stencil,
        "dca": 0.0,
    }
    table = {
        column: {
            **common,
            "fine_grid": mem_k if column == "matrix" else 0.0,
            "coarse_grid": coarse[column],
        }
        for column in MemoryModel3D.COLUMNS
    }
    return MemoryModel3D(
        n_fill_in=n_fill_in,
        n_restart=n_restart,
        c_agca=c_agca,
        c_u=c_u,
        mem_a=mem_a,
        mem_k=mem_k,
        sparse_gca=sparse_gca,
        elementwise_gca=elementwise,
        stencil=stencil,
        table=table,
    )


def gca_stored_entries(
    plan: CoarseningPlan, max_level: int, kind: OperatorKind = OperatorKind.VISCOUS
) -> int:
    """Return the reals a GCA store holds for a plan: sum over l < L of #elements * n^2."""
    elements = sum(4**level for level in range(max_level))
    return len(plan.gca_macros) * elements * kind.n_local**2


def _csr_words(matrix: sp.spmatrix) -> int:
    matrix = sp.csr_matrix(matrix)
    return 2 * int(matrix.nnz) + matrix.shape[0] + 1


def memory_tally_2d(
    hierarchy: MeshHierarchy,
    plan: CoarseningPlan,
    n_restart: int = 30,
    system: Optional["StokesSystem"] = None,
) -> MemoryTally2D:
    """Count the memory of a 2D run in stored reals and in fine-grid vectors N_L.

    Args:
        hierarchy: The mesh hierarchy.
        plan: Coarsening plan of the velocity block.
        n_restart: FGMRES restart length.
        system: A built Stokes system; when given, the CSR words of the assembled A_L, B
            and Z are measured as well.
    """
    finest = hierarchy.max_level
    n_u = 2 * hierarchy.num_vertices(finest)
    n_p = hierarchy.num_vertices(finest - 1)
    n_dofs = n_u + n_p
    if system is not None:
        store = system.levels[0].store
        stored = store.stored_entries
        per_level = store.entries_per_level
    else:
        stored = gca_stored_entries(plan, finest)
        per_level = {}
        if plan.gca_macros:
            per_level = {
                level: len(plan.gca_macros) * 4**level * 36 for level in range(finest)
            }

    reference = {
        "c_u": C_U_2D,
        "mem_a": A_ROW_WORDS_2D * C_U_2D,
        "sparse_gca": A_ROW_WORDS_2D * C_U_2D / 4.0,
        "elementwise_gca": 36 * 2 / 4.0 / 2.0 * C_U_2D,
        "stencil": 2 * 7 / 4.0 * C_U_2D,
    }
    measured: dict[str, float] = {}
    if system is not None:
        measured["A_L"] = _csr_words(assemble_sparse(system.levels[-1])) / n_dofs
        measured["B"] = _csr_words(system.operator.B) / n_dofs
        measured["Z"] = _csr_words(system.bfbt.Z) / n_dofs

    return MemoryTally2D(
        n_dofs=n_dofs,
        stored_entries=stored,
        stored_bytes=BYTES_PER_REAL * stored,
        entries_per_level=per_level,
        gca_macros=len(plan.gca_macros),
        c_agca=plan.c_agca,
        c_u=n_u / n_dofs,
        coarse_grid_vectors=stored / n_dofs,
        fgmres_vectors=2.0 + 2.0 * n_restart,
        reference=reference,
        measured_words=measured,
    )
