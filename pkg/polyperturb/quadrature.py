"""
Exact integration of polynomials over simplices, polytopes and faces.

Every integral is reduced to monomials over the standard simplex
{l >= 0, sum(l) <= 1} in R^d, where

    int l^a = prod(a_k!) / (|a| + d)!

after substituting the affine chart of the simplex into the polynomial.
"""
import logging
from math import factorial
from typing import List, Optional, Sequence, Tuple

import numpy as np

from polyperturb.errors import (
    ChartMismatch,
    DegenerateInput,
    DimensionMismatch,
    Empty,
    TriangulationMismatch,
)
from polyperturb.geometry import EPS_GEO, Face, Polytope, Simplex, from_halfspaces, triangulate
from polyperturb.polynomial import MAX_DEGREE, AffineMap, Polynomial
from polyperturb.util import validate

__all__ = [
    "Polynomial",
    "AffineMap",
    "standard_simplex_moment",
    "integrate_simplex",
    "integrate_monomial_simplex",
    "integrate_polytope",
    "integrate_face",
    "min_envelope_cells",
    "volume",
]

LOG = logging.getLogger(__name__)

# an input polynomial times a density piece and a P1 factor
MAX_INTEGRAND_DEGREE = MAX_DEGREE + 2


def standard_simplex_moment(exponents: Sequence[int]) -> float:
    d = len(exponents)
    numerator = 1
    for a in exponents:
        numerator *= factorial(a)
    return numerator / factorial(sum(exponents) + d)


def _integrate_standard(q: Polynomial) -> float:
    return float(sum(c * standard_simplex_moment(e) for e, c in q.items()))


def simplex_chart(s: Simplex) -> AffineMap:
    """Map from the standard simplex onto s (vertex 0 is the origin)."""
    return AffineMap((s.points[1:] - s.points[0]).T, s.points[0])


def integrate_simplex(
    p: Polynomial, s: Simplex, nodal: Optional[Sequence[float]] = None
) -> float:
    """
    Integral of p over s with respect to the dim(s)-volume.

    With `nodal`, p is multiplied by the affine function taking these values at
    the vertices of s (the P1 interpolant).
    """
    validate(
        p.dim == s.ambient_dim,
        "polynomial in {} variables over a simplex in R^{}",
        p.dim,
        s.ambient_dim,
        error=DimensionMismatch,
    )
    p.check_degree(MAX_INTEGRAND_DEGREE)
    q = p.compose(simplex_chart(s))
    if nodal is not None:
        values = np.asarray(nodal, dtype=float)
        validate(
            len(values) == s.dim + 1,
            "{} nodal values for a simplex with {} vertices",
            len(values),
            s.dim + 1,
            error=TriangulationMismatch,
        )
        q = q * Polynomial.linear(values[1:] - values[0], values[0])
    return s.jacobian * _integrate_standard(q)


def integrate_monomial_simplex(exponents: Sequence[int], s: Simplex) -> float:
    return integrate_simplex(Polynomial.monomial(exponents), s)


def integrate_polytope(p: Polynomial, polytope: Polytope, apex: Optional[int] = None) -> float:
    validate(
        p.dim == polytope.dim,
        "polynomial in {} variables over a polytope in R^{}",
        p.dim,
        polytope.dim,
        error=DimensionMismatch,
    )
    return float(sum(integrate_simplex(p, s) for s in triangulate(polytope, apex=apex)))


def volume(polytope: Polytope) -> float:
    return integrate_polytope(Polynomial.constant(polytope.dim, 1.0), polytope)


def min_envelope_cells(
    chart: Polytope, pieces: np.ndarray, eps: float = EPS_GEO
) -> List[Tuple[int, Polytope]]:
    """
    Split a polytope into the cells where each affine piece attains the minimum.

    `pieces` has rows [a_1, ..., a_d, b] for w -> <a, w> + b. Pieces that are
    minimal only on a lower dimensional set get no cell.
    """
    pieces = np.asarray(pieces, dtype=float).reshape(-1, chart.dim + 1)
    if len(pieces) == 1:
        return [(0, chart)]

    cells: List[Tuple[int, Polytope]] = []
    for j, (a_j, b_j) in enumerate(zip(pieces[:, :-1], pieces[:, -1])):
        halfspaces = list(chart.halfspaces)
        dominated = False
        for l, (a_l, b_l) in enumerate(zip(pieces[:, :-1], pieces[:, -1])):
            if l == j:
                continue
            normal = a_j - a_l
            if np.linalg.norm(normal) <= eps:
                # parallel pieces: the lower one wins everywhere, ties go to the first
                dominated = dominated or b_j > b_l + eps or (abs(b_j - b_l) <= eps and l < j)
                continue
            halfspaces.append((normal, b_l - b_j))
        if dominated:
            continue
        try:
            cell = from_halfspaces(halfspaces, eps=eps, max_halfspaces=len(halfspaces))
            cells.append((j, cell))
        except (Empty, DegenerateInput):
            continue
    return cells


def integrate_face(
    p: Polynomial,
    face: Face,
    weight: Optional[np.ndarray] = None,
    eps: float = EPS_GEO,
) -> float:
    """
    Integral of p times a concave piecewise-affine weight over a face.

    The weight is the minimum of the affine pieces (rows [a, b], a in chart
    coordinates of the face); None means the constant 1. Face charts are
    isometric, so no metric factor appears.
    """
    ambient = face.points.shape[1]
    validate(
        p.dim == ambient,
        "polynomial in {} variables over a face in R^{}",
        p.dim,
        ambient,
        error=DimensionMismatch,
    )
    if weight is None:
        return float(sum(integrate_simplex(p, s) for s in face.simplices))

    pieces = np.asarray(weight, dtype=float)
    validate(
        pieces.ndim == 2 and pieces.shape[1] == face.dim + 1 and len(pieces) > 0,
        "weight pieces of shape {} do not fit a {}-dimensional face chart",
        pieces.shape,
        face.dim,
        error=ChartMismatch,
    )
    if face.dim == 0:
        return float(p.evaluate(face.points[0]) * pieces[:, -1].min())

    if len(pieces) == 1:
        # a.w + b with w = B^T (x - o) as an ambient polynomial
        a, b = pieces[0, :-1], pieces[0, -1]
        grad = face.basis @ a
        factor = Polynomial.linear(grad, b - grad @ face.origin)
        return float(sum(integrate_simplex(p * factor, s) for s in face.simplices))

    local = p.compose(AffineMap.chart(face.origin, face.basis))
    chart = face.chart_polytope(eps=eps)
    total = 0.0
    covered = 0.0
    for j, cell in min_envelope_cells(chart, pieces, eps=eps):
        integrand = local * Polynomial.linear(pieces[j, :-1], pieces[j, -1])
        for s in triangulate(cell):
            total += integrate_simplex(integrand, s)
            covered += s.volume
    validate(
        abs(covered - face.volume) <= 1e-8 * max(1.0, face.volume),
        "envelope cells cover {} of a face with volume {}",
        covered,
        face.volume,
        error=ChartMismatch,
    )
    return total
