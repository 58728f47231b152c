"""Linear prolongation and restriction between consecutive levels.

Global transfers act on the level lattice directly: fine vertices that coincide with coarse
vertices copy the value, midpoints of horizontal, vertical and diagonal edges take the mean
of the edge's endpoints. Restriction is the exact transpose. Vector fields (component-major)
are transferred one component at a time.

The local interpolation matrices map the three nodal values of a coarse element to the
three nodal values of one of its children; they only depend on the orientation of the parent.
"""

from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray

from .mesh import DOWN, UP, MeshHierarchy, MicroElement, child_table, reference_elements

FloatArray = NDArray[np.float64]


class TransferError(ValueError):
    """Raised for out-of-range levels, child indices or vector sizes."""

    pass


def _components(hierarchy: MeshHierarchy, vector: FloatArray, level: int) -> int:
    n = hierarchy.num_vertices(level)
    if vector.ndim != 1 or vector.size % n != 0 or vector.size == 0:
        raise TransferError(
            f"Vector of size {vector.size} does not match level {level} ({n} vertices)"
        )
    return vector.size // n


def prolongate(hierarchy: MeshHierarchy, coarse: FloatArray, level: int) -> FloatArray:
    """Interpolate a level-l vector to level l+1.

    Args:
        hierarchy: The mesh hierarchy.
        coarse: Scalar or component-major vector field on level l.
        level: The coarse level l.

    Returns:
        The interpolated vector on level l+1.

    Raises:
        TransferError: If l+1 exceeds the finest level or the size does not match.
    """
    if not 0 <= level < hierarchy.max_level:
        raise TransferError(f"Cannot prolongate from level {level}")
    coarse = np.asarray(coarse, dtype=np.float64)
    ncomp = _components(hierarchy, coarse, level)
    mx, my = hierarchy.n_per_axis(level)
    c = coarse.reshape(ncomp, my + 1, mx + 1)
    fine = np.empty((ncomp, 2 * my + 1, 2 * mx + 1))
    fine[:, ::2, ::2] = c
    fine[:, ::2, 1::2] = 0.5 * (c[:, :, :-1] + c[:, :, 1:])
    fine[:, 1::2, ::2] = 0.5 * (c[:, :-1, :] + c[:, 1:, :])
    fine[:, 1::2, 1::2] = 0.5 * (c[:, :-1, :-1] + c[:, 1:, 1:])
    return fine.reshape(-1)


def restrict(hierarchy: MeshHierarchy, fine: FloatArray, level: int) -> FloatArray:
    """Apply the transpose of the prolongation to a level-(l+1) vector.

    Args:
        hierarchy: The mesh hierarchy.
        fine: Scalar or component-major vector field on level l+1.
        level: The fine level l+1.

    Returns:
        The restricted vector on level l.

    Raises:
        TransferError: If the level is 0 or out of range, or the size does not match.
    """
    if not 1 <= level <= hierarchy.max_level:
        raise TransferError(f"Cannot restrict from level {level}")
    fine = np.asarray(fine, dtype=np.float64)
    ncomp = _components(hierarchy, fine, level)
    mx, my = hierarchy.n_per_axis(level - 1)
    f = fine.reshape(ncomp, 2 * my + 1, 2 * mx + 1)
    c = f[:, ::2, ::2].copy()
    horizontal = 0.5 * f[:, ::2, 1::2]
    c[:, :, :-1] += horizontal
    c[:, :, 1:] += horizontal
    vertical = 0.5 * f[:, 1::2, ::2]
    c[:, :-1, :] += vertical
    c[:, 1:, :] += vertical
    diagonal = 0.5 * f[:, 1::2, 1::2]
    c[:, :-1, :-1] += diagonal
    c[:, 1:, 1:] += diagonal
    return c.reshape(-1)


def prolongation_matrix(hierarchy: MeshHierarchy, level: int, ncomp: int = 1) -> sp.csr_matrix:
    """Return the prolongation from level l to l+1 as a sparse matrix.

    Args:
        hierarchy: The mesh hierarchy.
        level: The coarse level l.
        ncomp: Number of field components (block-diagonal copies).
    """
    if not 0 <= level < hierarchy.max_level:
        raise TransferError(f"Cannot prolongate from level {level}")
    mx, my = hierarchy.n_per_axis(level)
    jj, ii = np.meshgrid(np.arange(my + 1), np.arange(mx + 1), indexing="ij")

    def coarse_index(i: NDArray[np.int64], j: NDArray[np.int64]) -> NDArray[np.int64]:
        return hierarchy.lattice_index(level, i, j)

    def fine_index(i: NDArray[np.int64], j: NDArray[np.int64]) -> NDArray[np.int64]:
        return hierarchy.lattice_index(level + 1, i, j)

    rows: list[NDArray[np.int64]] = []
    cols: list[NDArray[np.int64]] = []
    vals: list[FloatArray] = []

    def add(fi: NDArray[np.int64], ci: NDArray[np.int64], weight: float) -> None:
        rows.append(fi.ravel())
        cols.append(ci.ravel())
        vals.append(np.full(fi.size, weight))

    add(fine_index(2 * ii, 2 * jj), coarse_index(ii, jj), 1.0)
    i, j = ii[:, :-1], jj[:, :-1]
    f = fine_index(2 * i + 1, 2 * j)
    add(f, coarse_index(i, j), 0.5)
    add(f, coarse_index(i + 1, j), 0.5)
    i, j = ii[:-1, :], jj[:-1, :]
    f = fine_index(2 * i, 2 * j + 1)
    add(f, coarse_index(i, j), 0.5)
    add(f, coarse_index(i, j + 1), 0.5)
    i, j = ii[:-1, :-1], jj[:-1, :-1]
    f = fine_index(2 * i + 1, 2 * j + 1)
    add(f, coarse_index(i, j), 0.5)
    add(f, coarse_index(i + 1, j + 1), 0.5)

    shape = (hierarchy.num_vertices(level + 1), hierarchy.num_vertices(level))
    matrix = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape
    )
    if ncomp == 1:
        return matrix
    return sp.block_diag([matrix] * ncomp, format="csr")


def _barycentric(parent: FloatArray, point: FloatArray) -> FloatArray:
    matrix = np.vstack([parent.T, np.ones(3)])
    return np.asarray(np.linalg.solve(matrix, np.append(point, 1.0)), dtype=np.float64)


@lru_cache(maxsize=None)
def interp_table(kind: int) -> FloatArray:
    """Return the four 3x3 local interpolation matrices of a parent orientation.

    Args:
        kind: UP or DOWN.

    Returns:
        Array of shape (4, 3, 3); entry [c, i, k] is the weight of parent vertex k at
        local vertex i of child c.
    """
    if kind not in (UP, DOWN):
        raise TransferError(f"Unknown element kind {kind}")
    level = 0 if kind == UP else 1
    coarse, kinds = reference_elements(level)
    fine, _ = reference_elements(level + 1)
    parent_index = int(np.flatnonzero(kinds == kind)[0])
    parent = 2.0 * coarse[parent_index].astype(np.float64)
    table = np.empty((4, 3, 3))
    for c, child in enumerate(child_table(level)[parent_index]):
        for i, vertex in enumerate(fine[child].astype(np.float64)):
            table[c, i] = _barycentric(parent, vertex)
    table = np.round(2.0 * table) / 2.0
    table.setflags(write=False)
    return table


def vector_interp_table(kind: int) -> FloatArray:
    """Return the four 6x6 block-diagonal interpolation matrices of a parent orientation."""
    scalar = interp_table(kind)
    table = np.zeros((4, 6, 6))
    table[:, :3, :3] = scalar
    table[:, 3:, 3:] = scalar
    return table


def _check_child(element: MicroElement, child: int) -> None:
    if not 0 <= child < 4:
        raise TransferError(f"Child index must be in 0..3, got {child}")


def local_interp(element: MicroElement, child: int) -> FloatArray:
    """Return the 3x3 matrix mapping an element's nodal values to child ``child``.

    Raises:
        TransferError: For an invalid child index.
    """
    _check_child(element, child)
    return np.array(interp_table(element.kind)[child])


def local_interp_vector(element: MicroElement, child: int) -> FloatArray:
    """Return the 6x6 block-diagonal variant of local_interp.

    Raises:
        TransferError: For an invalid child index.
    """
    _check_child(element, child)
    return vector_interp_table(element.kind)[child]
