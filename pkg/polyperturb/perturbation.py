"""
Discrete perturbations of polytopes and the families realising them.

A discrete perturbation puts a concave piecewise-affine density on some
facets of P. `build_family` turns it into a one-parameter family P_t by
writing P as the region between two envelopes over the hyperplane v^perp
(v generic: no facet normal is orthogonal to it) and moving every facet graph
along v by t times its density, scaled so that the normal speed of the facet
equals the density:

    u(z, t) = min_{i in I+} h_i(z) + t f_i(z),   l(z, t) = max_{i in I-} h_i(z) - t f_i(z)
    P_t = {B z + y v | l(z, t) <= y <= u(z, t)}

Because every f_i is itself a minimum of affine pieces, P_t is an
intersection of halfspaces with one halfspace per (facet, piece).
"""
import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import null_space
from scipy.spatial import ConvexHull, Delaunay

from polyperturb.errors import (
    ChartMismatch,
    DegenerateInput,
    DegenerateResult,
    DimensionMismatch,
    EdgeNotInFacet,
    Empty,
    NotGeneric,
    RangeExceeded,
    ResolutionTooHigh,
    Unbounded,
)
from polyperturb.geometry import (
    DELTA_GEN,
    EPS_GEO,
    MAX_VERTICES,
    Face,
    Polytope,
    affine_rank,
    clip_points,
    from_halfspaces,
    from_vertices,
    is_generic,
    same_vertices,
)
from polyperturb.metrics import FAMILY_EVALUATIONS
from polyperturb.models import DiagnosticSample, Grid, SlopeComparison, SlopeSample
from polyperturb.polynomial import Polynomial
from polyperturb.quadrature import integrate_face, integrate_polytope, min_envelope_cells
from polyperturb.transport import DENSE_LP_ATOMS, SignedAtomicMeasure, wasserstein_norm
from polyperturb.util import validate

__all__ = [
    "DensityKind",
    "PiecewiseAffineDensity",
    "DiscretePerturbation",
    "PerturbedFamily",
    "canonical_density",
    "ridge_ids",
    "reversible_basis",
    "density_from_nodes",
    "pair",
    "build_family",
    "family_at",
    "weak_derivative_fd",
    "compare_slopes",
    "difference_measure_atoms",
    "discretize_perturbation",
    "wasserstein_diagnostic",
    "dihedral_angle",
    "hinge_angle",
]

LOG = logging.getLogger(__name__)

MAX_RESOLUTION = 64
# t_max is searched on 1, 1/2, 1/4, ...
T_MAX_HALVINGS = 20
RATIO_FLOOR = 1e-10


class DensityKind(enum.Enum):
    SHIFT = "shift"
    HINGE = "hinge"
    PYRAMID = "pyramid"


@dataclass(frozen=True)
class PiecewiseAffineDensity:
    """
    Concave density min_k (<a_k, w> + b_k) on one facet.

    `pieces` has rows [a_k, b_k] with a_k in the chart coordinates w of the
    facet. Values may be negative.
    """

    facet: int
    pieces: np.ndarray

    def __post_init__(self) -> None:
        pieces = np.array(self.pieces, dtype=float, ndmin=2)
        validate(len(pieces) > 0, "density on facet {} has no pieces", self.facet)
        pieces.setflags(write=False)
        object.__setattr__(self, "pieces", pieces)

    @property
    def chart_dim(self) -> int:
        return self.pieces.shape[1] - 1

    @property
    def is_affine(self) -> bool:
        return len(self.pieces) == 1

    def evaluate(self, w: np.ndarray) -> np.ndarray:
        pts = np.array(w, dtype=float, ndmin=2)
        return (pts @ self.pieces[:, :-1].T + self.pieces[:, -1]).min(axis=1)

    def scaled(self, factor: float) -> "PiecewiseAffineDensity":
        validate(factor >= 0, "only nonnegative multiples stay concave, got {}", factor)
        return PiecewiseAffineDensity(self.facet, self.pieces * factor)

    def negated(self) -> "PiecewiseAffineDensity":
        validate(self.is_affine, "only affine densities can be negated")
        return PiecewiseAffineDensity(self.facet, -self.pieces)

    def as_json(self) -> Dict[str, object]:
        return {
            "facet": self.facet,
            "pieces": [{"a": row[:-1].tolist(), "b": float(row[-1])} for row in self.pieces],
        }


def _dedupe_rows(rows: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    kept: List[np.ndarray] = []
    for row in rows:
        if not any(np.abs(row - k).max() <= tol for k in kept):
            kept.append(row)
    return np.asarray(kept)


def _prune(face: Face, pieces: np.ndarray, eps: float) -> np.ndarray:
    """Drop pieces that are nowhere uniquely minimal on the facet."""
    pieces = _dedupe_rows(pieces)
    if len(pieces) == 1:
        return pieces
    cells = min_envelope_cells(face.chart_polytope(eps=eps), pieces, eps=eps)
    keep = sorted(j for j, _ in cells)
    validate(len(keep) > 0, "density pieces have no full-dimensional cell", error=ChartMismatch)
    return pieces[keep]


class DiscretePerturbation:
    """Facet densities on a polytope; facets without density carry zero."""

    def __init__(
        self,
        polytope: Polytope,
        densities: Iterable[PiecewiseAffineDensity] = (),
        eps: float = EPS_GEO,
    ) -> None:
        facets = polytope.faces.facets
        by_facet: Dict[int, PiecewiseAffineDensity] = {}
        for density in densities:
            validate(
                0 <= density.facet < len(facets),
                "facet {} out of range [0, {})",
                density.facet,
                len(facets),
            )
            validate(density.facet not in by_facet, "facet {} listed twice", density.facet)
            validate(
                density.chart_dim == polytope.dim - 1,
                "density pieces of width {} on a facet of dimension {}",
                density.chart_dim + 1,
                polytope.dim - 1,
                error=ChartMismatch,
            )
            pieces = _prune(facets[density.facet], density.pieces, eps)
            by_facet[density.facet] = PiecewiseAffineDensity(density.facet, pieces)
        self.polytope = polytope
        self.eps = eps
        self.densities: Dict[int, PiecewiseAffineDensity] = dict(sorted(by_facet.items()))

    def __repr__(self) -> str:
        return f"DiscretePerturbation({self.polytope!r}, facets={list(self.densities)})"

    def density(self, facet: int) -> Optional[PiecewiseAffineDensity]:
        return self.densities.get(facet)

    def is_zero(self) -> bool:
        return all(
            np.abs(d.pieces).max() == 0.0 for d in self.densities.values()
        )

    @property
    def is_reversible(self) -> bool:
        return all(d.is_affine for d in self.densities.values())

    def scaled(self, factor: float) -> "DiscretePerturbation":
        return DiscretePerturbation(
            self.polytope, [d.scaled(factor) for d in self.densities.values()], self.eps
        )

    def __neg__(self) -> "DiscretePerturbation":
        return DiscretePerturbation(
            self.polytope, [d.negated() for d in self.densities.values()], self.eps
        )

    def __add__(self, other: "DiscretePerturbation") -> "DiscretePerturbation":
        validate(
            other.polytope is self.polytope or same_vertices(other.polytope, self.polytope),
            "perturbations live on different polytopes",
        )
        merged: List[PiecewiseAffineDensity] = []
        for facet in sorted(set(self.densities) | set(other.densities)):
            mine, theirs = self.density(facet), other.density(facet)
            if mine is None or theirs is None:
                merged.append(mine or theirs)
                continue
            # min_i p_i + min_j q_j = min_ij (p_i + q_j)
            sums = (mine.pieces[:, None, :] + theirs.pieces[None, :, :]).reshape(
                -1, mine.pieces.shape[1]
            )
            merged.append(PiecewiseAffineDensity(facet, sums))
        return DiscretePerturbation(self.polytope, merged, self.eps)

    def as_json(self) -> List[Dict[str, object]]:
        return [d.as_json() for d in self.densities.values()]


def ridge_ids(polytope: Polytope, facet: int) -> List[int]:
    """Indices (into the faces of dimension n - 2) of the ridges of a facet."""
    lattice = polytope.faces
    ids = set(lattice.facets[facet].vertex_ids)
    return [
        k
        for k, ridge in enumerate(lattice.faces(polytope.dim - 2))
        if set(ridge.vertex_ids) <= ids
    ]


def _distance_piece(face: Face, ridge: Face) -> np.ndarray:
    """Distance to aff(ridge) inside the facet chart, positive on the facet."""
    w = face.to_chart(ridge.points)
    _, _, vh = np.linalg.svd(w - w[0], full_matrices=True)
    a = vh[-1]
    b = -float(a @ w[0])
    if b < 0:
        a, b = -a, -b
    return np.append(a, b)


def canonical_density(
    polytope: Polytope,
    kind: DensityKind,
    facet: int,
    edge: Optional[int] = None,
) -> PiecewiseAffineDensity:
    """
    - SHIFT: 1 (parallel outward shift of the facet).
    - HINGE: distance to the affine hull of `edge`, a ridge of the facet.
    - PYRAMID: distance to the relative boundary of the facet.
    """
    lattice = polytope.faces
    validate(
        0 <= facet < len(lattice.facets),
        "facet {} out of range [0, {})",
        facet,
        len(lattice.facets),
    )
    face = lattice.facets[facet]
    d = face.dim
    if kind is DensityKind.SHIFT:
        return PiecewiseAffineDensity(facet, [[0.0] * d + [1.0]])

    ridges = lattice.faces(polytope.dim - 2)
    if kind is DensityKind.HINGE:
        validate(edge is not None, "hinge density needs an edge", error=EdgeNotInFacet)
        validate(
            edge in ridge_ids(polytope, facet),
            "ridge {} is not contained in facet {}",
            edge,
            facet,
            error=EdgeNotInFacet,
        )
        return PiecewiseAffineDensity(facet, [_distance_piece(face, ridges[edge])])

    pieces = [_distance_piece(face, ridges[k]) for k in ridge_ids(polytope, facet)]
    return PiecewiseAffineDensity(facet, pieces)


def reversible_basis(polytope: Polytope) -> List[DiscretePerturbation]:
    """Affine densities 1, w_1, ..., w_{n-1} on each facet, facet by facet."""
    n = polytope.dim
    basis = []
    for facet in range(len(polytope.faces.facets)):
        for k in range(n):
            row = np.zeros(n)
            if k == n - 1:
                row[-1] = 1.0
            else:
                row[k] = 1.0
            basis.append(DiscretePerturbation(polytope, [PiecewiseAffineDensity(facet, [row])]))
    return basis


def density_from_nodes(
    polytope: Polytope,
    facet: int,
    simplices: np.ndarray,
    values: np.ndarray,
    eps: float = EPS_GEO,
) -> PiecewiseAffineDensity:
    """
    Min-of-affines density of a concave piecewise-linear function.

    `simplices` holds the chart coordinates of a triangulation of the facet,
    shape (m, d + 1, d); `values` the nodal values, shape (m, d + 1). The
    result equals the interpolant exactly when it is concave.
    """
    simplices = np.asarray(simplices, dtype=float)
    values = np.asarray(values, dtype=float)
    validate(
        simplices.shape[:2] == values.shape,
        "{} nodal values for simplices of shape {}",
        values.shape,
        simplices.shape,
        error=DimensionMismatch,
    )
    ones = np.ones(simplices.shape[:2] + (1,))
    # [w 1] [a; b] = values on every simplex
    coeffs = np.linalg.solve(np.concatenate([simplices, ones], axis=2), values[..., None])
    coeffs = coeffs[..., 0]
    pieces = _dedupe_rows(coeffs, tol=1e-9 * max(1.0, float(np.abs(coeffs).max())))
    face = polytope.faces.facets[facet]
    return PiecewiseAffineDensity(facet, _prune(face, pieces, eps))


def pair(mu: DiscretePerturbation, p: Polynomial) -> float:
    """int p d(mu) = sum_F int_F p f_F"""
    validate(
        p.dim == mu.polytope.dim,
        "polynomial in {} variables paired with a perturbation in R^{}",
        p.dim,
        mu.polytope.dim,
        error=DimensionMismatch,
    )
    p.check_degree()
    facets = mu.polytope.faces.facets
    return float(
        sum(
            integrate_face(p, facets[i], density.pieces, eps=mu.eps)
            for i, density in mu.densities.items()
        )
    )


@dataclass(frozen=True)
class PerturbedFamily:
    """
    Family P_t, 0 <= t <= t_max, realising a discrete perturbation.

    `slopes[i]` is [grad h_i, c_i] with h_i(z) = <grad h_i, z> + c_i the height
    of facet i over z in v^perp (coordinates z = B^T x). `lifted[i]` holds the
    pieces of f_i in the same coordinates.
    """

    polytope: Polytope
    perturbation: DiscretePerturbation
    direction: np.ndarray
    basis: np.ndarray
    plus: Tuple[int, ...]
    minus: Tuple[int, ...]
    slopes: np.ndarray
    lifted: Tuple[np.ndarray, ...]
    shadow: Polytope
    t_max: float = 0.0
    clip_to_shadow: bool = False
    eps: float = EPS_GEO

    def envelopes(self, z: np.ndarray, t: float) -> Tuple[np.ndarray, np.ndarray]:
        """(u(z, t), l(z, t)) at each row of z."""
        z = np.array(z, dtype=float, ndmin=2)
        upper = np.full(len(z), np.inf)
        lower = np.full(len(z), -np.inf)
        for i in self.plus:
            rows = self.slopes[i] + t * self.lifted[i]
            upper = np.minimum(upper, (z @ rows[:, :-1].T + rows[:, -1]).min(axis=1))
        for i in self.minus:
            rows = self.slopes[i] - t * self.lifted[i]
            lower = np.maximum(lower, (z @ rows[:, :-1].T + rows[:, -1]).max(axis=1))
        return upper, lower

    def halfspaces(self, t: float) -> List[Tuple[np.ndarray, float]]:
        v, basis = self.direction, self.basis
        res: List[Tuple[np.ndarray, float]] = []
        for i in self.plus:
            # <v, x> <= h_i(z) + t f_k(z)
            for g, c in zip(*_split(self.slopes[i] + t * self.lifted[i])):
                res.append((v - basis @ g, c))
        for i in self.minus:
            # <v, x> >= h_i(z) - t f_k(z)
            for g, c in zip(*_split(self.slopes[i] - t * self.lifted[i])):
                res.append((basis @ g - v, -c))
        if self.clip_to_shadow:
            res.extend((basis @ w, b) for w, b in self.shadow.halfspaces)
        return res

    def evaluate(self, t: float) -> Polytope:
        """P_t without the range check."""
        halfspaces = self.halfspaces(t)
        FAMILY_EVALUATIONS.inc()
        try:
            return from_halfspaces(
                halfspaces, eps=self.eps, max_halfspaces=max(MAX_VERTICES, len(halfspaces))
            )
        except (Empty, DegenerateInput, Unbounded) as err:
            raise DegenerateResult(f"family degenerates at t={t}: {err}") from err


def _split(rows: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    rows = np.array(rows, ndmin=2)
    return rows[:, :-1], rows[:, -1]


def _lift(
    polytope: Polytope,
    facet: int,
    density: Optional[PiecewiseAffineDensity],
    v: np.ndarray,
    basis: np.ndarray,
    slope: np.ndarray,
) -> np.ndarray:
    """Pull the facet density back to v^perp, scaled by 1 / |<u_i, v>|."""
    n = polytope.dim
    if density is None:
        return np.zeros((1, n))
    face = polytope.faces.facets[facet]
    s = float(polytope.normals[facet] @ v)
    grad_h, c_h = slope[:-1], slope[-1]
    # chart coordinates of the facet point above z: w = M z + r
    m = face.basis.T @ (basis + np.outer(v, grad_h))
    r = face.basis.T @ (c_h * v - face.origin)
    a, b = density.pieces[:, :-1], density.pieces[:, -1]
    return np.column_stack([a @ m, a @ r + b]) / abs(s)


def build_family(
    polytope: Polytope,
    mu: DiscretePerturbation,
    v: Sequence[float],
    delta: float = DELTA_GEN,
    clip_to_shadow: bool = False,
) -> PerturbedFamily:
    validate(
        mu.polytope is polytope or same_vertices(mu.polytope, polytope),
        "perturbation was built on a different polytope",
    )
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    validate(
        is_generic(polytope, v, delta),
        "direction {} is not generic: min |<u_i, v>| = {} < {}",
        v.tolist(),
        float(np.abs(polytope.normals @ v).min()),
        delta,
        error=NotGeneric,
    )
    basis = null_space(v[None, :])
    s = polytope.normals @ v
    # h_i(z) = (b_i - <u_i, B z>) / s_i
    slopes = np.column_stack([-(polytope.normals @ basis) / s[:, None], polytope.offsets / s])
    lifted = tuple(
        _lift(polytope, i, mu.density(i), v, basis, slopes[i]) for i in range(len(s))
    )
    shadow = from_vertices(polytope.vertices @ basis, eps=polytope.eps)
    family = PerturbedFamily(
        polytope=polytope,
        perturbation=mu,
        direction=v,
        basis=basis,
        plus=tuple(int(i) for i in np.flatnonzero(s > 0)),
        minus=tuple(int(i) for i in np.flatnonzero(s < 0)),
        slopes=slopes,
        lifted=lifted,
        shadow=shadow,
        clip_to_shadow=clip_to_shadow,
        eps=polytope.eps,
    )
    t_max = _admissible_range(family)
    LOG.info(
        "family on %r: |I+|=%d, |I-|=%d, t_max=%g",
        polytope,
        len(family.plus),
        len(family.minus),
        t_max,
    )
    return replace(family, t_max=t_max)


def _admissible_range(family: PerturbedFamily) -> float:
    t = 1.0
    for _ in range(T_MAX_HALVINGS):
        try:
            family.evaluate(t)
            return t
        except DegenerateResult:
            t /= 2
    LOG.warning("family degenerates for every t >= %g", 2 * t)
    return 0.0


def family_at(family: PerturbedFamily, t: float) -> Polytope:
    validate(
        0.0 <= t <= family.t_max * (1 + 1e-12),
        "t={} outside the admissible range [0, {}]",
        t,
        family.t_max,
        error=RangeExceeded,
    )
    return family.evaluate(t)


def weak_derivative_fd(
    family: PerturbedFamily,
    p: Polynomial,
    t_grid: Sequence[float],
    threads: int = 1,
) -> List[SlopeSample]:
    """(int_{P_t} p - int_P p) / t along the grid."""
    validate(all(t > 0 for t in t_grid), "t grid must be strictly positive")
    p.check_degree()
    base = integrate_polytope(p, family.polytope)

    def quotient(t: float) -> SlopeSample:
        return SlopeSample(t, (integrate_polytope(p, family_at(family, t)) - base) / t)

    if threads > 1 and len(t_grid) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(quotient, t_grid))
    return [quotient(t) for t in t_grid]


def compare_slopes(samples: Sequence[SlopeSample], target: float) -> SlopeComparison:
    """Errors against the predicted slope and Richardson ratios err(t)/err(t')."""
    errors = [abs(s.quotient - target) for s in samples]
    ratios: List[Optional[float]] = []
    for e1, e2 in zip(errors, errors[1:]):
        ratios.append(e1 / e2 if e2 > RATIO_FLOOR else None)
    return SlopeComparison(target=target, samples=list(samples), errors=errors, ratios=ratios)


#
# Grid measures
#
Frame = Callable[[np.ndarray], np.ndarray]


def _clip(points: np.ndarray, axis: int, value: float, keep_above: bool) -> np.ndarray:
    """Part of conv(points) on one side of x_axis = value, cut points snapped onto it."""
    normal = np.zeros(points.shape[1])
    normal[axis] = -1.0 if keep_above else 1.0
    res = clip_points(points, normal, -value if keep_above else value)
    tol = 1e-12 * max(1.0, float(np.abs(points).max()))
    res[np.abs(res[:, axis] - value) <= tol, axis] = value
    return res


def _reduce(points: np.ndarray, frame: Frame, dim: int) -> Optional[np.ndarray]:
    """Extreme points of conv(points), None when it is not dim-dimensional."""
    if len(points) <= dim:
        return None
    local = frame(points)
    tol = 1e-12 * max(1.0, float(np.abs(local).max()))
    if dim == 1:
        lo, hi = int(np.argmin(local[:, 0])), int(np.argmax(local[:, 0]))
        return points[[lo, hi]] if local[hi, 0] - local[lo, 0] > tol else None
    if affine_rank(local, tol) < dim:
        return None
    return points[np.sort(ConvexHull(local).vertices)]


def _volume_and_centroid(local: np.ndarray) -> Tuple[float, np.ndarray]:
    dim = local.shape[1]
    if dim == 1:
        return float(np.ptp(local[:, 0])), np.array([0.5 * (local[:, 0].min() + local[:, 0].max())])
    tri = Delaunay(local)
    simplices = local[tri.simplices]
    edges = simplices[:, 1:, :] - simplices[:, :1, :]
    vols = np.abs(np.linalg.det(edges)) / np.prod(np.arange(1, dim + 1))
    total = float(vols.sum())
    return total, (vols[:, None] * simplices.mean(axis=1)).sum(axis=0) / total


def _bin(
    points: np.ndarray,
    grid: Grid,
    frame: Frame,
    dim: int,
    weight: Callable[[float, np.ndarray], float],
) -> Iterator[Tuple[Tuple[int, ...], float]]:
    """
    Split conv(points) along the grid planes, axis by axis, and yield
    (cell index, weight(volume, centroid)) for every piece. Volumes and
    centroids are taken in the frame coordinates.
    """
    n = points.shape[1]

    def cell(x: float, axis: int) -> int:
        k = int(np.floor((x - grid.lower[axis]) / grid.step[axis]))
        return min(max(k, 0), grid.resolution - 1)

    def recurse(pts: np.ndarray, axis: int, index: Tuple[int, ...]) -> Iterator:
        if axis == n:
            vol, centroid = _volume_and_centroid(frame(pts))
            yield index, weight(vol, centroid)
            return
        k0 = cell(pts[:, axis].min(), axis)
        k1 = cell(pts[:, axis].max(), axis)
        for k in range(k0, k1 + 1):
            part = pts
            if k > k0:
                part = _clip(part, axis, grid.lower[axis] + k * grid.step[axis], True)
            if k < k1:
                part = _clip(part, axis, grid.lower[axis] + (k + 1) * grid.step[axis], False)
            part = _reduce(part, frame, dim)
            if part is not None:
                yield from recurse(part, axis + 1, index + (k,))

    start = _reduce(points, frame, dim)
    if start is not None:
        yield from recurse(start, 0, ())


def _atoms(grid: Grid, weights: Dict[Tuple[int, ...], float], dim: int) -> SignedAtomicMeasure:
    if not weights:
        return SignedAtomicMeasure.empty(dim)
    keys = sorted(weights)
    return SignedAtomicMeasure(
        [grid.centre(k) for k in keys],
        [weights[k] for k in keys],
        dim=dim,
        max_atoms=max(len(keys), 1),
    )


def _outside_pieces(inner: Polytope, outer: Polytope) -> Iterator[Polytope]:
    """Disjoint convex pieces of inner minus outer."""
    for i, (u, b) in enumerate(outer.halfspaces):
        halfspaces = list(inner.halfspaces) + [(-u, -b)] + outer.halfspaces[:i]
        try:
            yield from_halfspaces(
                halfspaces, eps=inner.eps, max_halfspaces=max(MAX_VERTICES, len(halfspaces))
            )
        except (Empty, DegenerateInput):
            continue


def _difference_atoms(p: Polytope, q: Polytope, grid: Grid) -> SignedAtomicMeasure:
    weights: Dict[Tuple[int, ...], float] = {}
    identity: Frame = lambda x: x  # noqa: E731
    for sign, inner, outer in ((1.0, q, p), (-1.0, p, q)):
        for piece in _outside_pieces(inner, outer):
            for index, vol in _bin(piece.vertices, grid, identity, p.dim, lambda v, c: v):
                weights[index] = weights.get(index, 0.0) + sign * vol
    return _atoms(grid, weights, p.dim)


def difference_measure_atoms(
    p: Polytope, q: Polytope, resolution: int, max_resolution: int = MAX_RESOLUTION
) -> SignedAtomicMeasure:
    """
    1_Q - 1_P binned on a uniform grid over the bounding box of P and Q.

    Atoms sit at cell centres, weights are the exact signed volumes of
    (Q \\ P) and (P \\ Q) inside each cell.
    """
    validate(resolution >= 1, "resolution should be >= 1, got {}", resolution)
    validate(
        resolution <= max_resolution,
        "resolution {} exceeds the cap of {}",
        resolution,
        max_resolution,
        error=ResolutionTooHigh,
    )
    grid = Grid.around(np.vstack([p.vertices, q.vertices]), resolution)
    return _difference_atoms(p, q, grid)


def discretize_perturbation(mu: DiscretePerturbation, grid: Grid) -> SignedAtomicMeasure:
    """mu binned on the grid: exact integral of the density over facet and cell."""
    polytope = mu.polytope
    weights: Dict[Tuple[int, ...], float] = {}
    facets = polytope.faces.facets
    for i, density in mu.densities.items():
        face = facets[i]
        cells = min_envelope_cells(face.chart_polytope(eps=mu.eps), density.pieces, mu.eps)
        for j, cell in cells:
            a, b = density.pieces[j, :-1], density.pieces[j, -1]
            for index, value in _bin(
                face.from_chart(cell.vertices),
                grid,
                face.to_chart,
                face.dim,
                lambda vol, c, a=a, b=b: vol * float(a @ c + b),
            ):
                weights[index] = weights.get(index, 0.0) + value
    return _atoms(grid, weights, polytope.dim)


def wasserstein_diagnostic(
    family: PerturbedFamily,
    t_grid: Sequence[float],
    resolution: int,
    max_resolution: int = MAX_RESOLUTION,
    dense_lp_atoms: int = DENSE_LP_ATOMS,
) -> List[DiagnosticSample]:
    """|| (1/t)(1_{P_t} - 1_P) - mu ||_W along the grid, both binned on one grid."""
    validate(
        resolution <= max_resolution,
        "resolution {} exceeds the cap of {}",
        resolution,
        max_resolution,
        error=ResolutionTooHigh,
    )
    bodies = {t: family_at(family, t) for t in t_grid}
    grid = Grid.around(
        np.vstack([family.polytope.vertices] + [b.vertices for b in bodies.values()]),
        resolution,
    )
    target = discretize_perturbation(family.perturbation, grid)
    res = []
    for t, body in bodies.items():
        scaled = _difference_atoms(family.polytope, body, grid) * (1.0 / t)
        res.append(DiagnosticSample(t, wasserstein_norm(scaled - target, dense_lp_atoms)))
        LOG.debug("wasserstein diagnostic at t=%g: %.6g", t, res[-1].distance)
    return res


def dihedral_angle(u: np.ndarray, w: np.ndarray) -> float:
    """Angle between the hyperplanes with normals u and w."""
    cos = float(u @ w / (np.linalg.norm(u) * np.linalg.norm(w)))
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def hinge_angle(family: PerturbedFamily, facet: int, t: float) -> float:
    """
    Closed form of the angle between facet and the facet tilted by an affine
    density f with ambient gradient g.

    Moving the facet along v turns it by atan(t |g| / (1 + t <g, v> / <u, v>)),
    which is arcsin(t |g|) only when v is tuned to t.
    """
    density = family.perturbation.density(facet)
    validate(density is not None and density.is_affine, "facet {} has no affine density", facet)
    face = family.polytope.faces.facets[facet]
    g = face.basis @ density.pieces[0, :-1]
    u = family.polytope.normals[facet]
    beta = float(g @ family.direction) / float(u @ family.direction)
    return float(np.arctan2(t * np.linalg.norm(g), 1.0 + t * beta))
