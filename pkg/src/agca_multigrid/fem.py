"""P1 finite element kernels: quadrature, coefficient evaluation and local matrices.

Every kernel works on stacks of triangles: coordinates have shape ``(..., 3, 2)`` and the
leading axes are carried through, so one call computes the local matrices of all elements
of a level. The element-level functions (``local_diffusion`` and friends) are thin wrappers
for single micro elements.

Local vector DoFs are ordered component-major: ``[x0, x1, x2, y0, y1, y2]``.
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from .mesh import DofMap, MeshHierarchy, MicroElement
from .models import EvalMode
from .transfer import interp_table

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int64]

Source = Callable[[FloatArray, FloatArray], FloatArray]

MIN_AREA = 1.0e-14


class GeometryError(ValueError):
    """Raised for degenerate or inverted elements."""

    pass


class CoefficientError(ValueError):
    """Raised when a viscosity value is not strictly positive."""

    pass


class QuadratureError(ValueError):
    """Raised for unsupported quadrature degrees."""

    pass


class LevelError(ValueError):
    """Raised when a kernel is requested on a level where it does not exist."""

    pass


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Quadrature on triangles in barycentric coordinates, weights summing to 1."""

    degree: int
    points: FloatArray
    weights: FloatArray

    @property
    def size(self) -> int:
        """Return the number of points."""
        return int(self.weights.shape[0])

    def physical_points(self, coords: FloatArray) -> FloatArray:
        """Map the rule onto elements, returning shape (..., n_q, 2)."""
        return np.einsum("qa,...ad->...qd", self.points, coords)

    def integrate(self, values: FloatArray, area: FloatArray) -> FloatArray:
        """Integrate point values of shape (..., n_q) over elements of the given area."""
        return np.asarray(area * (values @ self.weights), dtype=np.float64)


def _permutations(a: float, b: float) -> list[list[float]]:
    return [[a, b, b], [b, a, b], [b, b, a]]


@lru_cache(maxsize=None)
def quadrature(degree: int) -> QuadratureRule:
    """Return an interior quadrature rule on the triangle.

    Degree 1 is the centroid rule, degree 2 the three-point rule at (2/3, 1/6, 1/6) and its
    permutations, degree 4 the six-point symmetric rule. None of them evaluates on the
    element boundary.

    Args:
        degree: Polynomial degree of exactness (1, 2 or 4).

    Returns:
        The rule.

    Raises:
        QuadratureError: For any other degree.
    """
    if degree == 1:
        points = np.array([[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]])
        weights = np.array([1.0])
    elif degree == 2:
        points = np.array(_permutations(2.0 / 3.0, 1.0 / 6.0))
        weights = np.full(3, 1.0 / 3.0)
    elif degree == 4:
        a = 0.44594849091596488632
        b = 0.09157621350977074346
        points = np.array(_permutations(1.0 - 2.0 * a, a) + _permutations(1.0 - 2.0 * b, b))
        weights = np.array([0.22338158967801146570] * 3 + [0.10995174365532186764] * 3)
    else:
        raise QuadratureError(f"Unsupported quadrature degree {degree}; use 1, 2 or 4")
    points.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(degree=degree, points=points, weights=weights)


def p1_geometry(coords: FloatArray) -> tuple[FloatArray, FloatArray]:
    """Return the P1 basis gradients and the areas of a stack of triangles.

    Args:
        coords: Vertex coordinates, shape (..., 3, 2).

    Returns:
        Gradients of shape (..., 3, 2) and areas of shape (...).

    Raises:
        GeometryError: If any element has area below 1e-14 or negative orientation.
    """
    x = coords[..., 0]
    y = coords[..., 1]
    det = (x[..., 1] - x[..., 0]) * (y[..., 2] - y[..., 0]) - (x[..., 2] - x[..., 0]) * (
        y[..., 1] - y[..., 0]
    )
    if np.any(0.5 * det < MIN_AREA):
        raise GeometryError("Degenerate or inverted element (area < 1e-14)")
    grads = np.stack(
        [
            np.stack([y[..., 1] - y[..., 2], x[..., 2] - x[..., 1]], axis=-1),
            np.stack([y[..., 2] - y[..., 0], x[..., 0] - x[..., 2]], axis=-1),
            np.stack([y[..., 0] - y[..., 1], x[..., 1] - x[..., 0]], axis=-1),
        ],
        axis=-2,
    )
    return grads / det[..., None, None], 0.5 * det


def barycentric(coords: FloatArray, point: FloatArray) -> FloatArray:
    """Return the barycentric coordinates of a point in one triangle."""
    matrix = np.vstack([coords.T, np.ones(3)])
    return np.asarray(np.linalg.solve(matrix, np.append(point, 1.0)), dtype=np.float64)


def weighted_mean(values: FloatArray, weights: FloatArray, mode: EvalMode) -> FloatArray:
    """Average positive samples along the last axis.

    Args:
        values: Samples, shape (..., n).
        weights: Positive weights, shape (n,).
        mode: One of the three mean modes.

    Returns:
        The arithmetic, harmonic or geometric mean, shape (...).

    Raises:
        CoefficientError: If a sample is not positive or the mode is not a mean.
    """
    _check_positive(values)
    total = float(np.sum(weights))
    if mode is EvalMode.MEAN_ARITHMETIC:
        return np.asarray(values @ weights / total, dtype=np.float64)
    if mode is EvalMode.MEAN_HARMONIC:
        return np.asarray(total / ((1.0 / values) @ weights), dtype=np.float64)
    if mode is EvalMode.MEAN_GEOMETRIC:
        return np.asarray(np.exp(np.log(values) @ weights / total), dtype=np.float64)
    raise CoefficientError(f"{mode.value} is not a mean mode")


def _check_positive(values: FloatArray) -> None:
    if not np.all(values > 0.0):
        bad = float(np.nanmin(values)) if np.any(np.isfinite(values)) else float("nan")
        raise CoefficientError(f"Viscosity must be strictly positive (found {bad})")


class CoefficientEval:
    """Evaluates a viscosity inside element integrals according to an evaluation mode.

    Analytic mode calls the source at the quadrature points. InterpP1 interpolates the
    finest-grid nodal values linearly on the element. The mean modes replace the
    viscosity on each element by a mean of samples at the degree-4 rule; on a coarse level
    the samples are taken on the coarse element.
    """

    SAMPLING_DEGREE = 4

    def __init__(
        self,
        mode: EvalMode,
        source: Source,
        hierarchy: Optional[MeshHierarchy] = None,
    ):
        """Initialize the evaluator.

        Args:
            mode: Evaluation mode.
            source: Vectorized analytic viscosity eta(x, y).
            hierarchy: Mesh hierarchy; InterpP1 reads its nodal values from the finest level.
        """
        self.mode = mode
        self.source = source
        self.hierarchy = hierarchy
        self.nodal: Optional[FloatArray] = None
        if mode is EvalMode.INTERP_P1 and hierarchy is not None:
            coords = hierarchy.coordinates(hierarchy.max_level)
            self.nodal = self.analytic(coords)

    def analytic(self, points: FloatArray) -> FloatArray:
        """Evaluate the source at points of shape (..., 2), checking positivity."""
        values = np.asarray(self.source(points[..., 0], points[..., 1]), dtype=np.float64)
        values = np.broadcast_to(values, points.shape[:-1])
        _check_positive(values)
        return values

    def vertex_values(self, level: int, coords: FloatArray, cells: IntArray) -> FloatArray:
        """Return P1 nodal values at element vertices, shape (..., 3)."""
        if self.nodal is not None and self.hierarchy is not None:
            fine = self.hierarchy.finer_index(level, cells, self.hierarchy.max_level)
            return self.nodal[fine]
        return self.analytic(coords)

    def element_constants(self, coords: FloatArray) -> FloatArray:
        """Return one mean value per element, shape (...)."""
        rule = quadrature(self.SAMPLING_DEGREE)
        samples = self.analytic(rule.physical_points(coords))
        return weighted_mean(samples, rule.weights, self.mode)

    def quadrature_values(
        self, level: int, coords: FloatArray, cells: IntArray, rule: QuadratureRule
    ) -> FloatArray:
        """Return viscosity values at the rule's points, shape (..., n_q).

        Args:
            level: Level of the elements.
            coords: Element coordinates, shape (..., 3, 2).
            cells: Global vertex indices of the elements on that level, shape (..., 3).
            rule: Quadrature rule.
        """
        if self.mode is EvalMode.ANALYTIC:
            return self.analytic(rule.physical_points(coords))
        if self.mode is EvalMode.INTERP_P1:
            nodal = self.vertex_values(level, coords, cells)
            return np.asarray(nodal @ rule.points.T, dtype=np.float64)
        constants = self.element_constants(coords)
        return np.repeat(constants[..., None], rule.size, axis=-1)

    def integrated(
        self, level: int, coords: FloatArray, cells: IntArray, rule: QuadratureRule
    ) -> FloatArray:
        """Return the quadrature-weighted viscosity per element, shape (...)."""
        return np.asarray(self.quadrature_values(level, coords, cells, rule) @ rule.weights)


def diffusion_kernel(coords: FloatArray, eta_bar: FloatArray) -> FloatArray:
    """Return P1 stiffness matrices eta * grad(phi_i) . grad(phi_j), shape (..., 3, 3).

    ``eta_bar`` is the quadrature-weighted viscosity of each element; the gradients are
    constant, so the integral factorizes.
    """
    grads, area = p1_geometry(coords)
    lap = grads @ np.swapaxes(grads, -1, -2)
    return np.asarray((area * eta_bar)[..., None, None] * lap, dtype=np.float64)


def viscous_kernel(coords: FloatArray, eta_bar: FloatArray) -> FloatArray:
    """Return the 6x6 matrices of 2 eta eps(u) : eps(v), shape (..., 6, 6)."""
    grads, area = p1_geometry(coords)
    lap = grads @ np.swapaxes(grads, -1, -2)
    shape = coords.shape[:-2] + (6, 6)
    out = np.empty(shape, dtype=np.float64)
    for c in range(2):
        for d in range(2):
            block = np.einsum("...a,...b->...ab", grads[..., :, d], grads[..., :, c])
            if c == d:
                block = block + lap
            out[..., 3 * c : 3 * c + 3, 3 * d : 3 * d + 3] = block
    return np.asarray((area * eta_bar)[..., None, None] * out, dtype=np.float64)


def divergence_kernel(child_coords: FloatArray, interp: FloatArray) -> FloatArray:
    """Return integrals of psi_k div(Phi_j) over the four children of pressure elements.

    Args:
        child_coords: Coordinates of the velocity children, shape (..., 4, 3, 2).
        interp: Local interpolation matrices of the children, shape (..., 4, 3, 3).

    Returns:
        Blocks of shape (..., 4, 3, 6): pressure DoF k of the parent against the 6 vector
        DoFs of each child.
    """
    grads, area = p1_geometry(child_coords)
    row = (area / 3.0)[..., None] * np.concatenate([grads[..., :, 0], grads[..., :, 1]], axis=-1)
    return np.asarray(np.einsum("...cik,...cj->...ckj", interp, row), dtype=np.float64)


@dataclass(frozen=True, eq=False)
class LocalMatrix:
    """A dense element matrix with the owning element's DoF map."""

    values: FloatArray
    dofs: DofMap

    @property
    def size(self) -> int:
        """Return n (3 scalar, 6 vector)."""
        return int(self.values.shape[0])

    @property
    def global_dofs(self) -> IntArray:
        """Return the global DoFs matching the rows of the matrix."""
        return self.dofs.scalar if self.size == 3 else self.dofs.vector


def _element_eta_bar(
    element: MicroElement, eta: CoefficientEval, rule: QuadratureRule
) -> FloatArray:
    return eta.integrated(
        element.level, element.vertices[None], element.dofs.vertices[None], rule
    )


def local_diffusion(
    element: MicroElement, eta: CoefficientEval, rule: Optional[QuadratureRule] = None
) -> LocalMatrix:
    """Return the 3x3 diffusion matrix of one micro element.

    Raises:
        GeometryError: For a degenerate element.
    """
    rule = rule or quadrature(2)
    values = diffusion_kernel(element.vertices[None], _element_eta_bar(element, eta, rule))[0]
    return LocalMatrix(values=values, dofs=element.dofs)


def local_viscous(
    element: MicroElement, eta: CoefficientEval, rule: Optional[QuadratureRule] = None
) -> LocalMatrix:
    """Return the 6x6 viscous matrix of one micro element.

    Raises:
        GeometryError: For a degenerate element.
    """
    rule = rule or quadrature(2)
    values = viscous_kernel(element.vertices[None], _element_eta_bar(element, eta, rule))[0]
    return LocalMatrix(values=values, dofs=element.dofs)


@dataclass(frozen=True, eq=False)
class LocalDivergence:
    """Divergence blocks of one pressure element against its four velocity children."""

    blocks: FloatArray
    pressure_dofs: DofMap
    velocity_dofs: list[DofMap]


def local_divergence(hierarchy: MeshHierarchy, element: MicroElement) -> LocalDivergence:
    """Return the divergence coupling of a pressure element on level l-1.

    Args:
        hierarchy: Mesh hierarchy; velocities live on level element.level + 1.
        element: The pressure element.

    Raises:
        LevelError: If the element has no velocity children (finest level).
    """
    if element.level >= hierarchy.max_level:
        raise LevelError(
            f"Pressure element on level {element.level} has no velocity level below it"
        )
    children = hierarchy.children(element)
    child_coords = np.stack([c.vertices for c in children])
    blocks = divergence_kernel(child_coords, interp_table(element.kind))
    return LocalDivergence(
        blocks=blocks,
        pressure_dofs=element.dofs,
        velocity_dofs=[c.dofs for c in children],
    )


def evaluate_coefficient(eta: CoefficientEval, element: MicroElement, point: FloatArray) -> float:
    """Return the viscosity seen at a point inside an element.

    Raises:
        CoefficientError: If the value is not strictly positive.
    """
    point = np.asarray(point, dtype=np.float64)
    if eta.mode is EvalMode.ANALYTIC:
        return float(eta.analytic(point[None])[0])
    if eta.mode is EvalMode.INTERP_P1:
        nodal = eta.vertex_values(element.level, element.vertices, element.dofs.vertices)
        return float(nodal @ barycentric(element.vertices, point))
    return float(eta.element_constants(element.vertices[None])[0])
