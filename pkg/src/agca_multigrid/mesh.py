"""Block-structured triangular grids: macro grid, uniform refinement and DoF maps.

The unit square is split into ``nx x ny`` cells, each cut into two triangles along the
diagonal from its lower-left to its upper-right corner. Every macro triangle is refined
``L`` times by red refinement (four congruent children per triangle).

Global numbering on level ``l`` is the lattice index ``iy * (nx * 2**l + 1) + ix``. Vector
fields are component-major: all x components first, then all y components.

Micro elements of one macro element are enumerated row-major on the macro's barycentric
lattice of resolution ``n = 2**l``: for ``j = 0..n-1`` and ``i = 0..n-1-j`` the upward
element ``(i, j)`` comes first, followed by the downward element ``(i, j)`` when
``i + j < n - 1``. Upward elements have local vertices ``(i, j), (i+1, j), (i, j+1)``,
downward elements ``(i+1, j), (i+1, j+1), (i, j+1)``. Both keep the positive orientation of
the macro element.
"""

import logging
from collections.abc import Iterator
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from numpy.typing import NDArray

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int64]
BoolArray = NDArray[np.bool_]

UP = 0
DOWN = 1


class MeshError(ValueError):
    """Raised for invalid mesh parameters, macro indices or levels."""

    pass


@lru_cache(maxsize=None)
def reference_elements(level: int) -> tuple[IntArray, NDArray[np.int8]]:
    """Return the barycentric lattice vertices and kinds of a macro's level-l elements.

    Args:
        level: Refinement level (0 is the macro element itself).

    Returns:
        Tuple of an integer array of shape (4**level, 3, 2) holding lattice coordinates
        (i, j) of the three local vertices, and an array of kinds (UP or DOWN).
    """
    n = 2**level
    bary: list[tuple[tuple[int, int], ...]] = []
    kinds: list[int] = []
    for j in range(n):
        for i in range(n - j):
            bary.append(((i, j), (i + 1, j), (i, j + 1)))
            kinds.append(UP)
            if i + j < n - 1:
                bary.append(((i + 1, j), (i + 1, j + 1), (i, j + 1)))
                kinds.append(DOWN)
    bary_arr = np.array(bary, dtype=np.int64).reshape(n * n, 3, 2)
    kind_arr = np.array(kinds, dtype=np.int8)
    bary_arr.setflags(write=False)
    kind_arr.setflags(write=False)
    return bary_arr, kind_arr


def _anchor(vertices: IntArray, kind: int) -> tuple[int, int]:
    """Return the (i, j) label of an element from its lattice vertices."""
    if kind == UP:
        return int(vertices[0, 0]), int(vertices[0, 1])
    return int(vertices[2, 0]), int(vertices[0, 1])


@lru_cache(maxsize=None)
def child_table(level: int) -> IntArray:
    """Return the level-(l+1) indices of the four children of every level-l element.

    Children 0, 1 and 2 are the corner children at the parent's local vertices 0, 1 and 2;
    child 3 is the central child with opposite orientation.

    Args:
        level: Level of the parent elements.

    Returns:
        Integer array of shape (4**level, 4).
    """
    coarse, coarse_kinds = reference_elements(level)
    fine, fine_kinds = reference_elements(level + 1)
    lookup = {
        (int(k), *_anchor(v, int(k))): idx for idx, (v, k) in enumerate(zip(fine, fine_kinds))
    }
    table = np.empty((len(coarse), 4), dtype=np.int64)
    for e, (v, k) in enumerate(zip(coarse, coarse_kinds)):
        i, j = _anchor(v, int(k))
        if k == UP:
            keys = [
                (UP, 2 * i, 2 * j),
                (UP, 2 * i + 1, 2 * j),
                (UP, 2 * i, 2 * j + 1),
                (DOWN, 2 * i, 2 * j),
            ]
        else:
            keys = [
                (DOWN, 2 * i + 1, 2 * j),
                (DOWN, 2 * i + 1, 2 * j + 1),
                (DOWN, 2 * i, 2 * j + 1),
                (UP, 2 * i + 1, 2 * j + 1),
            ]
        table[e] = [lookup[key] for key in keys]
    table.setflags(write=False)
    return table


@dataclass(frozen=True, eq=False)
class MacroGrid:
    """Macro triangulation of the unit square."""

    nx: int
    ny: int
    vertices: FloatArray
    lattice: IntArray
    macro_elements: IntArray
    boundary: BoolArray

    @property
    def n_macros(self) -> int:
        """Return the number of macro triangles."""
        return int(self.macro_elements.shape[0])

    @property
    def n_vertices(self) -> int:
        """Return the number of macro vertices."""
        return int(self.vertices.shape[0])

    def areas(self) -> FloatArray:
        """Return the signed area of every macro triangle."""
        p = self.vertices[self.macro_elements]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return np.asarray(0.5 * (d1[:, 0] * d2[:, 1] - d2[:, 0] * d1[:, 1]), dtype=np.float64)


def build_macro_grid(nx: int, ny: int) -> MacroGrid:
    """Build the structured macro grid of the unit square.

    Args:
        nx: Number of cells along x.
        ny: Number of cells along y.

    Returns:
        MacroGrid with 2*nx*ny triangles and (nx+1)*(ny+1) vertices.

    Raises:
        MeshError: If a cell count is not positive.
    """
    if nx < 1 or ny < 1:
        raise MeshError(f"Cell counts must be positive, got nx={nx}, ny={ny}")

    iy, ix = np.meshgrid(np.arange(ny + 1), np.arange(nx + 1), indexing="ij")
    lattice = np.column_stack([ix.ravel(), iy.ravel()]).astype(np.int64)
    vertices = np.column_stack([lattice[:, 0] / nx, lattice[:, 1] / ny])

    triangles = []
    for cy in range(ny):
        for cx in range(nx):
            v00 = cy * (nx + 1) + cx
            v10 = v00 + 1
            v01 = v00 + nx + 1
            v11 = v01 + 1
            triangles.append((v00, v10, v11))
            triangles.append((v00, v11, v01))

    boundary = (
        (lattice[:, 0] == 0) | (lattice[:, 0] == nx) | (lattice[:, 1] == 0) | (lattice[:, 1] == ny)
    )
    return MacroGrid(
        nx=nx,
        ny=ny,
        vertices=vertices,
        lattice=lattice,
        macro_elements=np.array(triangles, dtype=np.int64),
        boundary=boundary,
    )


@dataclass(frozen=True, eq=False)
class DofMap:
    """Local-to-global map of one micro element."""

    vertices: IntArray
    n_vertices: int
    boundary: BoolArray

    @property
    def scalar(self) -> IntArray:
        """Return the 3 global vertex indices."""
        return self.vertices

    @property
    def vector(self) -> IntArray:
        """Return the 6 global component indices, component-major."""
        return np.concatenate([self.vertices, self.vertices + self.n_vertices])

    @property
    def vector_boundary(self) -> BoolArray:
        """Return the boundary mask of the 6 vector DoFs."""
        return np.concatenate([self.boundary, self.boundary])

    def local_index(self, global_index: int, vector: bool = False) -> int:
        """Return the local position of a global DoF on this element.

        Raises:
            MeshError: If the DoF does not belong to the element.
        """
        dofs = self.vector if vector else self.scalar
        hits = np.flatnonzero(dofs == global_index)
        if hits.size == 0:
            raise MeshError(f"DoF {global_index} is not on this element")
        return int(hits[0])


@dataclass(frozen=True, eq=False)
class MicroElement:
    """A level-l triangle inside a macro element."""

    macro: int
    level: int
    index: int
    kind: int
    vertices: FloatArray
    dofs: DofMap

    @property
    def area(self) -> float:
        """Return the signed area."""
        d1 = self.vertices[1] - self.vertices[0]
        d2 = self.vertices[2] - self.vertices[0]
        return float(0.5 * (d1[0] * d2[1] - d2[0] * d1[1]))


class MeshHierarchy:
    """A macro grid with L levels of uniform refinement.

    All level data (vertex coordinates, boundary masks, element-to-vertex tables) is
    computed at construction; the object is read-only afterwards.
    """

    def __init__(self, macro: MacroGrid, max_level: int):
        """Initialize the hierarchy.

        Args:
            macro: The macro grid.
            max_level: Finest level L.
        """
        self.macro = macro
        self.max_level = max_level
        self._cells = [self._build_cells(level) for level in range(max_level + 1)]
        self._coordinates = [self._build_coordinates(level) for level in range(max_level + 1)]
        self._boundary = [self._build_boundary(level) for level in range(max_level + 1)]
        for level in range(max_level + 1):
            self._cells[level].setflags(write=False)
            self._coordinates[level].setflags(write=False)
            self._boundary[level].setflags(write=False)
        logger.debug(
            "Mesh hierarchy %dx%d macros, L=%d, %d fine vertices",
            macro.nx,
            macro.ny,
            max_level,
            self.num_vertices(max_level),
        )

    def check_level(self, level: int) -> None:
        """Raise MeshError unless 0 <= level <= L."""
        if not 0 <= level <= self.max_level:
            raise MeshError(f"Level {level} out of range [0, {self.max_level}]")

    def check_macro(self, macro: int) -> None:
        """Raise MeshError for an invalid macro index."""
        if not 0 <= macro < self.macro.n_macros:
            raise MeshError(f"Macro index {macro} out of range [0, {self.macro.n_macros})")

    @property
    def n_macros(self) -> int:
        """Return the number of macro elements."""
        return self.macro.n_macros

    def n_per_axis(self, level: int) -> tuple[int, int]:
        """Return the lattice cell counts (nx * 2**l, ny * 2**l)."""
        return self.macro.nx * 2**level, self.macro.ny * 2**level

    def spacing(self, level: int) -> tuple[float, float]:
        """Return the lattice spacing per axis."""
        mx, my = self.n_per_axis(level)
        return 1.0 / mx, 1.0 / my

    def num_vertices(self, level: int) -> int:
        """Return N_vert(l) = (nx 2^l + 1)(ny 2^l + 1)."""
        mx, my = self.n_per_axis(level)
        return (mx + 1) * (my + 1)

    def num_micro_elements(self, level: int) -> int:
        """Return the number of level-l micro elements over all macros."""
        return 4**level * self.n_macros

    def lattice_index(self, level: int, ix: IntArray, iy: IntArray) -> IntArray:
        """Return global indices of lattice points."""
        mx, _ = self.n_per_axis(level)
        return np.asarray(iy, dtype=np.int64) * (mx + 1) + np.asarray(ix, dtype=np.int64)

    def index_to_lattice(self, level: int, index: IntArray) -> tuple[IntArray, IntArray]:
        """Return lattice coordinates (ix, iy) of global indices."""
        mx, _ = self.n_per_axis(level)
        iy, ix = np.divmod(np.asarray(index, dtype=np.int64), mx + 1)
        return ix, iy

    def coordinate_to_index(self, level: int, points: FloatArray) -> IntArray:
        """Return the global indices of lattice points given by coordinates.

        Raises:
            MeshError: If a point is not a level-l lattice point.
        """
        mx, my = self.n_per_axis(level)
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        scaled = pts * np.array([mx, my])
        lattice = np.rint(scaled)
        if np.any(np.abs(scaled - lattice) > 1.0e-9) or np.any(lattice < 0):
            raise MeshError("Point is not on the lattice")
        if np.any(lattice[:, 0] > mx) or np.any(lattice[:, 1] > my):
            raise MeshError("Point is outside the unit square")
        ix = lattice[:, 0].astype(np.int64)
        return self.lattice_index(level, ix, lattice[:, 1].astype(np.int64))

    def finer_index(self, level: int, index: IntArray, target: int) -> IntArray:
        """Map level-l vertex indices to the same vertices on a finer level."""
        self.check_level(target)
        if target < level:
            raise MeshError(f"Target level {target} is coarser than {level}")
        ix, iy = self.index_to_lattice(level, index)
        factor = 2 ** (target - level)
        return self.lattice_index(target, ix * factor, iy * factor)

    def coordinates(self, level: int) -> FloatArray:
        """Return vertex coordinates of level l, shape (N_vert(l), 2)."""
        self.check_level(level)
        return self._coordinates[level]

    def boundary_mask(self, level: int) -> BoolArray:
        """Return the scalar boundary mask of level l."""
        self.check_level(level)
        return self._boundary[level]

    def vector_boundary_mask(self, level: int) -> BoolArray:
        """Return the boundary mask of a two-component field on level l."""
        mask = self.boundary_mask(level)
        return np.concatenate([mask, mask])

    def cells(self, level: int) -> IntArray:
        """Return global vertex indices of all level-l elements, shape (M, 4**l, 3)."""
        self.check_level(level)
        return self._cells[level]

    def vector_cells(self, level: int) -> IntArray:
        """Return global component indices of all level-l elements, shape (M, 4**l, 6)."""
        cells = self.cells(level)
        return np.concatenate([cells, cells + self.num_vertices(level)], axis=-1)

    def element_coordinates(self, level: int) -> FloatArray:
        """Return vertex coordinates of all level-l elements, shape (M, 4**l, 3, 2)."""
        return self.coordinates(level)[self.cells(level)]

    def micro_element(self, macro: int, level: int, index: int) -> MicroElement:
        """Return a single micro element."""
        self.check_macro(macro)
        self.check_level(level)
        if not 0 <= index < 4**level:
            raise MeshError(f"Micro element index {index} out of range at level {level}")
        _, kinds = reference_elements(level)
        vertices = self._cells[level][macro, index]
        return MicroElement(
            macro=macro,
            level=level,
            index=index,
            kind=int(kinds[index]),
            vertices=self._coordinates[level][vertices],
            dofs=DofMap(
                vertices=vertices,
                n_vertices=self.num_vertices(level),
                boundary=self._boundary[level][vertices],
            ),
        )

    def micro_elements(self, macro: int, level: int) -> Iterator[MicroElement]:
        """Yield the 4**l micro elements of a macro element in lattice order.

        Raises:
            MeshError: If the macro index or the level is invalid.
        """
        self.check_macro(macro)
        self.check_level(level)
        for index in range(4**level):
            yield self.micro_element(macro, level, index)

    def children(self, element: MicroElement) -> list[MicroElement]:
        """Return the four level-(l+1) children of a micro element.

        Raises:
            MeshError: If the element lives on the finest level.
        """
        if element.level >= self.max_level:
            raise MeshError(f"Elements on the finest level {self.max_level} have no children")
        table = child_table(element.level)
        return [
            self.micro_element(element.macro, element.level + 1, int(c))
            for c in table[element.index]
        ]

    def _build_cells(self, level: int) -> IntArray:
        n = 2**level
        bary, _ = reference_elements(level)
        corners = self.macro.lattice[self.macro.macro_elements]
        origin = corners[:, 0]
        d1 = corners[:, 1] - origin
        d2 = corners[:, 2] - origin
        points = (
            n * origin[:, None, None, :]
            + bary[None, :, :, 0:1] * d1[:, None, None, :]
            + bary[None, :, :, 1:2] * d2[:, None, None, :]
        )
        return self.lattice_index(level, points[..., 0], points[..., 1])

    def _build_coordinates(self, level: int) -> FloatArray:
        mx, my = self.n_per_axis(level)
        iy, ix = np.meshgrid(np.arange(my + 1), np.arange(mx + 1), indexing="ij")
        return np.column_stack([ix.ravel() / mx, iy.ravel() / my])

    def _build_boundary(self, level: int) -> BoolArray:
        mx, my = self.n_per_axis(level)
        ix, iy = self.index_to_lattice(level, np.arange(self.num_vertices(level)))
        return np.asarray((ix == 0) | (ix == mx) | (iy == 0) | (iy == my))


def refine_hierarchy(
    macro: MacroGrid, max_level: int, allow_single_level: bool = False
) -> MeshHierarchy:
    """Refine a macro grid uniformly L times.

    Args:
        macro: The macro grid.
        max_level: Number of refinements L.
        allow_single_level: Accept L = 0 (a single level, no multigrid).

    Returns:
        The mesh hierarchy.

    Raises:
        MeshError: If L is negative, or zero without allow_single_level.
    """
    if max_level < 0 or (max_level == 0 and not allow_single_level):
        raise MeshError(f"Number of levels must be >= 1, got {max_level}")
    return MeshHierarchy(macro, max_level)


def dump_mesh(hierarchy: MeshHierarchy, level: int, macro: Optional[int] = None) -> str:
    """Return a plain-text vertex and element listing of one level.

    Args:
        hierarchy: The mesh hierarchy.
        level: Level to list.
        macro: Restrict the element listing to one macro element.

    Returns:
        The listing.
    """
    hierarchy.check_level(level)
    coords = hierarchy.coordinates(level)
    boundary = hierarchy.boundary_mask(level)
    cells = hierarchy.cells(level)
    macros = range(hierarchy.n_macros) if macro is None else [macro]
    lines = [
        f"# level {level}: {hierarchy.num_vertices(level)} vertices, "
        f"{hierarchy.num_micro_elements(level)} elements",
        "vertices",
    ]
    for idx, (x, y) in enumerate(coords):
        flag = " boundary" if boundary[idx] else ""
        lines.append(f"{idx} {x:.6f} {y:.6f}{flag}")
    lines.append("elements")
    for m in macros:
        hierarchy.check_macro(m)
        for e, (a, b, c) in enumerate(cells[m]):
            lines.append(f"{m} {e} {a} {b} {c}")
    return "\n".join(lines) + "\n"
