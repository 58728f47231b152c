"""Sinker benchmark problems: viscosity fields, forcing and load vectors.

All shapes live in the unit square. The high and low viscosity levels of a problem with
dynamic ratio DR are sqrt(DR) and 1/sqrt(DR); every viscosity is the low level plus the
contrast times a characteristic function xi with values in [0, 1].

Families:
    1. Square of side 1/4 centered at (1/2, 1/2), aligned with every macro grid of even size.
    2. The same square centered at (C_UA, C_UA) with C_UA = 11/24, never grid-aligned.
    3. A tanh-smoothed version of family 2 with steepness omega.
    4. Disk of radius 0.1 centered at (1/2, 1/2).
    5. Smooth Gaussian sinkers: xi = prod_j (1 - exp(-omega * max(0, |p_j - x| - 0.05)^2));
       the viscosity uses 1 - xi so that it is high at the sinkers.
    6. Balls of radius 0.1 at the sinker centers (union, or the literal product).
"""

import logging
from collections.abc import Callable

import numpy as np
from numpy.typing import NDArray

from .fem import Source, p1_geometry, quadrature
from .mesh import MeshHierarchy
from .models import ProblemConfig, RhsSign

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
Force = Callable[[FloatArray, FloatArray], tuple[FloatArray, FloatArray]]

C_UA = 11.0 / 24.0
HALF_SIDE = 1.0 / 8.0
DISK_RADIUS = 0.1
BALL_RADIUS = 0.1
GAUSS_OFFSET = 0.05
POSITION_MARGIN = 0.15
POSITION_SPAN = 0.7


def halton(index: int, base: int) -> float:
    """Return element ``index`` (starting at 1) of the van der Corput sequence in ``base``."""
    if index < 1:
        raise ValueError(f"Halton index must be >= 1, got {index}")
    result, scale = 0.0, 1.0
    while index > 0:
        scale /= base
        index, digit = divmod(index, base)
        result += digit * scale
    return result


def sinker_positions(n: int) -> list[tuple[float, float]]:
    """Return n deterministic sinker centers inside [0.15, 0.85]^2.

    The centers are the first n points of the Halton sequence in bases 2 and 3, mapped
    affinely from the unit square.

    Raises:
        ValueError: If n < 1.
    """
    if n < 1:
        raise ValueError(f"Number of sinkers must be >= 1, got {n}")
    return [
        (
            POSITION_MARGIN + POSITION_SPAN * halton(k, 2),
            POSITION_MARGIN + POSITION_SPAN * halton(k, 3),
        )
        for k in range(1, n + 1)
    ]


def _centers(problem: ProblemConfig) -> list[tuple[float, float]]:
    if problem.positions is not None:
        return list(problem.positions)
    return sinker_positions(problem.n_sinkers)


def _square(center: float) -> Source:
    def xi(x: FloatArray, y: FloatArray) -> FloatArray:
        inside = np.maximum(np.abs(x - center), np.abs(y - center)) <= HALF_SIDE
        return inside.astype(np.float64)

    return xi


def _tanh_window(t: FloatArray, center: float, radius: float, omega: float) -> FloatArray:
    rise = np.tanh(omega * (t - (center - radius)))
    fall = np.tanh(omega * (t - (center + radius)))
    return np.asarray(0.5 * (rise - fall), dtype=np.float64)


def _disk(x: FloatArray, y: FloatArray) -> FloatArray:
    return (np.hypot(x - 0.5, y - 0.5) <= DISK_RADIUS).astype(np.float64)


def characteristic(problem: ProblemConfig) -> Source:
    """Return the characteristic function xi of a sinker family.

    Raises:
        ValueError: For the Poisson problem, which has no sinker family of its own.
    """
    family = problem.family
    if family == "poisson":
        if problem.coefficient_family is None:
            raise ValueError("The Poisson problem has no characteristic function")
        family = problem.coefficient_family
    omega = problem.omega

    if family == 1:
        return _square(0.5)
    if family == 2:
        return _square(C_UA)
    if family == 3:

        def smooth_square(x: FloatArray, y: FloatArray) -> FloatArray:
            wx = _tanh_window(x, C_UA, HALF_SIDE, omega)
            return wx * _tanh_window(y, C_UA, HALF_SIDE, omega)

        return smooth_square
    if family == 4:
        return _disk

    centers = _centers(problem)
    if family == 5:

        def gaussian(x: FloatArray, y: FloatArray) -> FloatArray:
            xi = np.ones(np.broadcast(x, y).shape)
            for px, py in centers:
                gap = np.maximum(0.0, np.hypot(x - px, y - py) - GAUSS_OFFSET)
                xi = xi * (1.0 - np.exp(-omega * gap**2))
            return xi

        return gaussian

    union = problem.sinker_union

    def balls(x: FloatArray, y: FloatArray) -> FloatArray:
        shape = np.broadcast(x, y).shape
        acc = np.ones(shape)
        for px, py in centers:
            inside = (np.hypot(x - px, y - py) <= BALL_RADIUS).astype(np.float64)
            acc = acc * (1.0 - inside) if union else acc * inside
        return 1.0 - acc if union else acc

    return balls


def _family(problem: ProblemConfig) -> int:
    if problem.family == "poisson":
        if problem.coefficient_family is None:
            raise ValueError("The Poisson problem has no sinker family")
        return problem.coefficient_family
    return int(problem.family)


def viscosity(problem: ProblemConfig) -> Source:
    """Return the analytic viscosity of a problem.

    For the Poisson problem without a coefficient family the viscosity is constant 1.
    """
    if problem.is_poisson and problem.coefficient_family is None:

        def unit(x: FloatArray, y: FloatArray) -> FloatArray:
            return np.ones(np.broadcast(x, y).shape)

        return unit

    xi = characteristic(problem)
    low, high = problem.eta_low, problem.eta_high
    contrast = high - low
    inverted = _family(problem) == 5

    def eta(x: FloatArray, y: FloatArray) -> FloatArray:
        weight = xi(x, y)
        if inverted:
            weight = 1.0 - weight
        return np.clip(low + contrast * weight, low, high)

    return eta


def rhs(problem: ProblemConfig) -> Force:
    """Return the body force of a sinker problem.

    Families 1-4 and 6 pull downward where xi = 1. Family 5 uses (0, 1 - xi) literally, or
    (0, -(1 - xi)) with ``rhs_sign: downward``.
    """
    xi = characteristic(problem)
    family = _family(problem)
    if family == 5:
        sign = 1.0 if problem.rhs_sign is RhsSign.LITERAL else -1.0

        def force5(x: FloatArray, y: FloatArray) -> tuple[FloatArray, FloatArray]:
            fy = sign * (1.0 - xi(x, y))
            return np.zeros_like(fy), fy

        return force5

    def force(x: FloatArray, y: FloatArray) -> tuple[FloatArray, FloatArray]:
        fy = -np.asarray(xi(x, y), dtype=np.float64)
        return np.zeros_like(fy), fy

    return force


def _local_loads(
    hierarchy: MeshHierarchy, level: int, values: Callable[[FloatArray], FloatArray]
) -> FloatArray:
    rule = quadrature(4)
    coords = hierarchy.element_coordinates(level)
    _, area = p1_geometry(coords)
    points = rule.physical_points(coords)
    samples = values(points)
    return np.einsum("...q,q,qa->...a", samples, rule.weights, rule.points) * area[..., None]


def _scatter(hierarchy: MeshHierarchy, level: int, local: FloatArray) -> FloatArray:
    n = hierarchy.num_vertices(level)
    return np.bincount(hierarchy.cells(level).ravel(), weights=local.ravel(), minlength=n)


def load_vector(hierarchy: MeshHierarchy, level: int, force: Force) -> FloatArray:
    """Assemble the velocity load vector of a body force, zero on boundary DoFs.

    Returns:
        Component-major vector of size 2 * N_vertices(level).
    """
    hierarchy.check_level(level)
    components = []
    for c in range(2):
        local = _local_loads(
            hierarchy, level, lambda p, c=c: np.asarray(force(p[..., 0], p[..., 1])[c])
        )
        components.append(_scatter(hierarchy, level, local))
    f = np.concatenate(components)
    f[hierarchy.vector_boundary_mask(level)] = 0.0
    return f


def scalar_load(hierarchy: MeshHierarchy, level: int, source: Source) -> FloatArray:
    """Assemble the scalar load vector of a source term, zero on boundary DoFs."""
    hierarchy.check_level(level)

    def sample(points: FloatArray) -> FloatArray:
        values = np.asarray(source(points[..., 0], points[..., 1]), dtype=np.float64)
        return np.broadcast_to(values, points.shape[:-1])

    f = _scatter(hierarchy, level, _local_loads(hierarchy, level, sample))
    f[hierarchy.boundary_mask(level)] = 0.0
    return f
