"""
Convex polytopes in dual V/H representation.

A `Polytope` is immutable: vertices, unit outer normals and offsets are fixed
at construction and validated against each other. The face lattice (with an
orthonormal chart and a fan triangulation for every proper face) is built on
first access under a lock, so polytopes can be shared between threads.

Dimensions 1 to 4 are supported; 1-dimensional polytopes (segments) only
appear as facet charts of polygons and are not accepted by the readers.
"""
import itertools
import logging
import threading
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull
from scipy.stats import norm, qmc

from polyperturb.errors import (
    DegenerateInput,
    DegenerateSimplex,
    Empty,
    GenericityFailure,
    TooManyVertices,
    Unbounded,
)
from polyperturb.metrics import POLYTOPE_CONSTRUCTIONS
from polyperturb.util import validate

__all__ = [
    "Polytope",
    "Face",
    "FaceLattice",
    "Simplex",
    "from_vertices",
    "from_halfspaces",
    "face_lattice",
    "triangulate",
    "triangulate_face",
    "generic_direction",
    "first_generic",
    "is_generic",
    "same_vertices",
    "clip_points",
    "affine_rank",
    "cube",
    "standard_simplex",
    "simplex",
    "regular_polygon",
    "cross_polytope",
]

LOG = logging.getLogger(__name__)

EPS_GEO = 1e-9
DELTA_GEN = 1e-3
MAX_VERTICES = 64
MAX_DIM = 4
GENERIC_ATTEMPTS = 256

# brute force vertex enumeration works on chunks of n-subsets
_COMBINATION_CHUNK = 50_000


def _scale(points: np.ndarray) -> float:
    return max(1.0, float(np.abs(points).max())) if points.size else 1.0


def affine_rank(points: np.ndarray, tol: float) -> int:
    if len(points) <= 1:
        return 0
    diffs = points[1:] - points[0]
    singular = np.linalg.svd(diffs, compute_uv=False)
    return int((singular > tol).sum())


def _unique_points(points: np.ndarray, tol: float) -> np.ndarray:
    """Greedy deduplication, keeps the first representative in input order."""
    kept: List[np.ndarray] = []
    for p in points:
        if not kept or np.min(np.linalg.norm(np.asarray(kept) - p, axis=1)) > tol:
            kept.append(p)
    return np.asarray(kept).reshape(-1, points.shape[1])


def _orthonormal_span(diffs: np.ndarray, tol: float) -> np.ndarray:
    """
    Gram-Schmidt on the rows of diffs, in order, skipping dependent rows.

    Returns the basis as columns. Axis-aligned edges give axis-aligned charts,
    which keeps facet grids aligned with ambient grids.
    """
    basis: List[np.ndarray] = []
    for d in diffs:
        r = d - sum((b @ d) * b for b in basis) if basis else d.copy()
        length = np.linalg.norm(r)
        if length > tol:
            basis.append(r / length)
    n = diffs.shape[1]
    return np.asarray(basis).T.reshape(n, len(basis))


@dataclass(frozen=True)
class Simplex:
    """d+1 affinely independent points in R^n (d <= n)."""

    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=float, ndmin=2)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if len(pts) > 1:
            edges = pts[1:] - pts[0]
            gram = edges @ edges.T
            longest = float(np.max(np.einsum("ij,ij->i", edges, edges)))
            validate(
                np.linalg.det(gram) > EPS_GEO * longest ** len(edges),
                "simplex with points {} is degenerate",
                pts.tolist(),
                error=DegenerateSimplex,
            )

    @property
    def dim(self) -> int:
        return len(self.points) - 1

    @property
    def ambient_dim(self) -> int:
        return self.points.shape[1]

    @property
    def jacobian(self) -> float:
        """d-volume scale of the map from the standard simplex (= d! vol)."""
        if self.dim == 0:
            return 1.0
        edges = self.points[1:] - self.points[0]
        return float(np.sqrt(max(np.linalg.det(edges @ edges.T), 0.0)))

    @property
    def volume(self) -> float:
        return self.jacobian / float(np.prod(np.arange(1, self.dim + 1)))

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)


class Face(NamedTuple):
    """
    A proper face of a polytope.

    The chart `w -> origin + basis @ w` is an isometry from R^dim onto the
    affine hull of the face.
    """

    dim: int
    vertex_ids: Tuple[int, ...]
    halfspace_ids: Tuple[int, ...]
    points: np.ndarray
    origin: np.ndarray
    basis: np.ndarray
    simplices: Tuple[Simplex, ...]

    def to_chart(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.origin) @ self.basis

    def from_chart(self, w: np.ndarray) -> np.ndarray:
        return self.origin + np.asarray(w, dtype=float) @ self.basis.T

    @property
    def volume(self) -> float:
        """dim-volume; vertices count 1."""
        return float(sum(s.volume for s in self.simplices))

    def chart_polytope(self, eps: float = EPS_GEO) -> "Polytope":
        """The face as a full-dimensional polytope in its own chart."""
        validate(self.dim >= 1, "vertices have no chart polytope", error=DegenerateInput)
        return from_vertices(self.to_chart(self.points), eps=eps)


class FaceLattice:
    """Proper faces of a polytope by dimension; facets are indexed like halfspaces."""

    faces_by_dim: Dict[int, Tuple[Face, ...]]

    def __init__(self, faces_by_dim: Dict[int, Tuple[Face, ...]]) -> None:
        self.faces_by_dim = faces_by_dim

    def faces(self, dim: int) -> Tuple[Face, ...]:
        return self.faces_by_dim.get(dim, ())

    @property
    def facets(self) -> Tuple[Face, ...]:
        return self.faces(max(self.faces_by_dim))

    @property
    def counts(self) -> Dict[int, int]:
        return {d: len(fs) for d, fs in sorted(self.faces_by_dim.items())}

    def all_faces(self) -> Iterable[Face]:
        for d in sorted(self.faces_by_dim):
            yield from self.faces_by_dim[d]

    def subfaces(self, face: Face, dim: Optional[int] = None) -> List[Face]:
        """Faces of the given dimension (default: dim - 1) contained in face."""
        dim = face.dim - 1 if dim is None else dim
        ids = set(face.vertex_ids)
        return [g for g in self.faces(dim) if set(g.vertex_ids) <= ids]

    def find(self, vertex_ids: Iterable[int]) -> Optional[Face]:
        key = tuple(sorted(vertex_ids))
        for face in self.all_faces():
            if face.vertex_ids == key:
                return face
        return None


class Polytope:
    """
    Full-dimensional bounded convex polytope.

    `normals` are unit outer normals u_i and `offsets` the b_i of <u_i, x> <= b_i.
    Use `from_vertices` / `from_halfspaces` rather than the constructor; the
    constructor only checks that both representations agree.
    """

    def __init__(
        self,
        vertices: np.ndarray,
        normals: np.ndarray,
        offsets: np.ndarray,
        eps: float = EPS_GEO,
    ) -> None:
        vertices = np.array(vertices, dtype=float, ndmin=2)
        normals = np.array(normals, dtype=float, ndmin=2)
        offsets = np.array(offsets, dtype=float).reshape(-1)
        n = vertices.shape[1]

        validate(1 <= n <= MAX_DIM, "dimension {} not in [1, {}]", n, MAX_DIM)
        validate(
            normals.shape == (len(offsets), n),
            "normals {} do not match offsets {}",
            normals.shape,
            offsets.shape,
        )
        tol = eps * _scale(vertices)
        validate(
            affine_rank(vertices, tol) == n,
            "vertices do not span R^{}",
            n,
            error=DegenerateInput,
        )
        slack = normals @ vertices.T - offsets[:, None]
        validate(
            bool((slack <= tol).all()),
            "vertex violates a halfspace by {}",
            float(slack.max()),
            error=DegenerateInput,
        )
        for i in range(len(offsets)):
            tight = vertices[np.abs(slack[i]) <= tol]
            validate(
                affine_rank(tight, tol) == n - 1,
                "halfspace {} is not facet-defining",
                i,
                error=DegenerateInput,
            )

        for arr in (vertices, normals, offsets):
            arr.setflags(write=False)
        self.dim = n
        self.vertices = vertices
        self.normals = normals
        self.offsets = offsets
        self.eps = eps
        self._faces: Optional[FaceLattice] = None
        self._lock = threading.Lock()

    def __repr__(self) -> str:
        return (
            f"Polytope(dim={self.dim}, vertices={len(self.vertices)}, "
            f"facets={len(self.offsets)})"
        )

    @property
    def halfspaces(self) -> List[Tuple[np.ndarray, float]]:
        return [(u, float(b)) for u, b in zip(self.normals, self.offsets)]

    @property
    def tolerance(self) -> float:
        return self.eps * _scale(self.vertices)

    @property
    def faces(self) -> FaceLattice:
        with self._lock:
            if self._faces is None:
                self._faces = _build_face_lattice(self)
            return self._faces

    def facet(self, index: int) -> Face:
        return self.faces.facets[index]

    @property
    def volume(self) -> float:
        return float(sum(s.volume for s in triangulate(self)))

    @property
    def vertex_centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def contains(self, points: np.ndarray, tol: Optional[float] = None) -> np.ndarray:
        """Boolean mask of points inside (within tol)."""
        tol = self.tolerance if tol is None else tol
        pts = np.array(points, dtype=float, ndmin=2)
        return (pts @ self.normals.T - self.offsets <= tol).all(axis=1)

    def transformed(self, matrix: np.ndarray, offset: Optional[np.ndarray] = None) -> "Polytope":
        """Image under x -> matrix @ x + offset, matrix invertible."""
        matrix = np.asarray(matrix, dtype=float)
        offset = np.zeros(self.dim) if offset is None else np.asarray(offset, dtype=float)
        validate(
            abs(np.linalg.det(matrix)) > self.eps,
            "affine map is not invertible",
            error=DegenerateInput,
        )
        vertices = self.vertices @ matrix.T + offset
        # <u, x> <= b with x = A^-1 (y - c)  <=>  <A^-T u, y> <= b + <A^-T u, c>
        normals = np.linalg.solve(matrix.T, self.normals.T).T
        offsets = self.offsets + normals @ offset
        lengths = np.linalg.norm(normals, axis=1)
        return Polytope(
            vertices, normals / lengths[:, None], offsets / lengths, eps=self.eps
        )

    def translated(self, shift: np.ndarray) -> "Polytope":
        return self.transformed(np.eye(self.dim), shift)

    def as_json(self) -> Dict[str, object]:
        return {
            "dim": self.dim,
            "vertices": self.vertices.tolist(),
            "halfspaces": [{"u": u.tolist(), "b": float(b)} for u, b in self.halfspaces],
        }


def same_vertices(p: Polytope, q: Polytope, tol: float = 1e-7) -> bool:
    """Vertex sets agree up to permutation and tol."""
    if p.dim != q.dim or len(p.vertices) != len(q.vertices):
        return False
    dist = np.linalg.norm(p.vertices[:, None, :] - q.vertices[None, :, :], axis=2)
    return bool((dist.min(axis=1) <= tol).all() and (dist.min(axis=0) <= tol).all())


def clip_points(points: np.ndarray, normal: np.ndarray, offset: float) -> np.ndarray:
    """
    Points spanning conv(points) ∩ {<normal, x> <= offset}.

    Every segment between a point inside and a point outside is cut; cuts of
    segments that are not edges lie inside the hull, so the hull is right.
    """
    points = np.asarray(points, dtype=float)
    s = offset - points @ np.asarray(normal, dtype=float)
    tol = 1e-12 * max(1.0, float(np.abs(points).max()), abs(offset))
    inside, outside = points[s > tol], points[s < -tol]
    on = points[np.abs(s) <= tol]
    if len(inside) == 0 or len(outside) == 0:
        return np.vstack([inside, on])
    s_in, s_out = s[s > tol], s[s < -tol]
    lam = s_in[:, None] / (s_in[:, None] - s_out[None, :])
    cuts = inside[:, None, :] + lam[..., None] * (outside[None, :, :] - inside[:, None, :])
    return np.vstack([inside, on, cuts.reshape(-1, points.shape[1])])


def _dedupe_halfspaces(
    normals: np.ndarray, offsets: np.ndarray, tol: float
) -> Tuple[np.ndarray, np.ndarray]:
    keep: List[int] = []
    for i in range(len(offsets)):
        if not any(
            np.linalg.norm(normals[i] - normals[j]) <= tol
            and abs(offsets[i] - offsets[j]) <= tol
            for j in keep
        ):
            keep.append(i)
    return normals[keep], offsets[keep]


def from_vertices(
    points: Sequence[Sequence[float]],
    eps: float = EPS_GEO,
    max_vertices: int = MAX_VERTICES,
) -> Polytope:
    """Convex hull of points; interior and non-extreme points are dropped."""
    pts = np.array(points, dtype=float, ndmin=2)
    validate(pts.ndim == 2 and len(pts) > 0, "expected a non-empty list of points")
    n = pts.shape[1]
    validate(1 <= n <= MAX_DIM, "dimension {} not in [1, {}]", n, MAX_DIM)
    validate(
        len(pts) <= max_vertices,
        "{} points exceed the cap of {}",
        len(pts),
        max_vertices,
        error=TooManyVertices,
    )
    tol = eps * _scale(pts)
    validate(
        affine_rank(pts, tol) == n,
        "points span an affine subspace of dimension < {}",
        n,
        error=DegenerateInput,
    )
    POLYTOPE_CONSTRUCTIONS.labels(representation="vertices").inc()

    if n == 1:
        lo, hi = float(pts.min()), float(pts.max())
        return Polytope([[lo], [hi]], [[-1.0], [1.0]], [-lo, hi], eps=eps)

    hull = ConvexHull(pts)
    vertices = pts[np.sort(hull.vertices)]
    normals = hull.equations[:, :-1]
    offsets = -hull.equations[:, -1]
    lengths = np.linalg.norm(normals, axis=1)
    normals, offsets = _dedupe_halfspaces(
        normals / lengths[:, None], offsets / lengths, 1e3 * tol
    )
    LOG.debug("hull of %d points: %d vertices, %d facets", len(pts), len(vertices), len(offsets))
    return Polytope(vertices, normals, offsets, eps=eps)


def _check_bounded(normals: np.ndarray, tol: float) -> None:
    """The recession cone {d | A d <= 0} must be trivial."""
    n = normals.shape[1]
    zeros = np.zeros(len(normals))
    for axis, sign in itertools.product(range(n), (1.0, -1.0)):
        c = np.zeros(n)
        c[axis] = -sign
        res = linprog(c, A_ub=normals, b_ub=zeros, bounds=[(-1, 1)] * n, method="highs")
        validate(
            res.status == 0 and -res.fun <= tol,
            "halfspace intersection is unbounded along {}e_{}",
            "+" if sign > 0 else "-",
            axis,
            error=Unbounded,
        )


def _enumerate_vertices(normals: np.ndarray, offsets: np.ndarray, tol: float) -> np.ndarray:
    """Feasible intersection points of all n-subsets of constraint hyperplanes."""
    k, n = normals.shape
    found: List[np.ndarray] = []
    combos = itertools.combinations(range(k), n)
    while True:
        chunk = np.array(list(itertools.islice(combos, _COMBINATION_CHUNK)), dtype=int)
        if chunk.size == 0:
            break
        chunk = chunk.reshape(-1, n)
        mats = normals[chunk]
        ok = np.abs(np.linalg.det(mats)) > 1e-12
        if not ok.any():
            continue
        sol = np.linalg.solve(mats[ok], offsets[chunk[ok]][..., None])[..., 0]
        feasible = (sol @ normals.T - offsets <= tol).all(axis=1)
        found.append(sol[feasible])
    if not found:
        return np.zeros((0, n))
    return np.vstack(found)


def from_halfspaces(
    halfspaces: Iterable[Tuple[Sequence[float], float]],
    eps: float = EPS_GEO,
    max_halfspaces: int = MAX_VERTICES,
) -> Polytope:
    """Intersection of halfspaces <u, x> <= b; redundant halfspaces are removed."""
    pairs = list(halfspaces)
    validate(len(pairs) > 0, "expected at least one halfspace", error=Unbounded)
    normals = np.array([u for u, _ in pairs], dtype=float, ndmin=2)
    offsets = np.array([b for _, b in pairs], dtype=float)
    n = normals.shape[1]
    validate(1 <= n <= MAX_DIM, "dimension {} not in [1, {}]", n, MAX_DIM)
    validate(
        len(pairs) <= max_halfspaces,
        "{} halfspaces exceed the cap of {}",
        len(pairs),
        max_halfspaces,
        error=TooManyVertices,
    )
    lengths = np.linalg.norm(normals, axis=1)
    validate(bool((lengths > 0).all()), "zero normal vector")
    normals = normals / lengths[:, None]
    offsets = offsets / lengths
    POLYTOPE_CONSTRUCTIONS.labels(representation="halfspaces").inc()

    _check_bounded(normals, eps)
    tol = eps * max(1.0, float(np.abs(offsets).max()))
    points = _enumerate_vertices(normals, offsets, tol)
    validate(len(points) > 0, "halfspace intersection is empty", error=Empty)
    vertices = _unique_points(points, 1e3 * tol)
    tol = eps * _scale(vertices)
    validate(
        affine_rank(vertices, tol) == n,
        "halfspace intersection is not full-dimensional",
        error=DegenerateInput,
    )

    slack = normals @ vertices.T - offsets[:, None]
    facet_ids = [
        i
        for i in range(len(offsets))
        if affine_rank(vertices[np.abs(slack[i]) <= 1e3 * tol], 1e3 * tol) == n - 1
    ]
    normals, offsets = _dedupe_halfspaces(normals[facet_ids], offsets[facet_ids], 1e3 * tol)
    return Polytope(vertices, normals, offsets, eps=eps)


def _face_record(
    polytope: Polytope,
    vertex_ids: FrozenSet[int],
    halfspace_ids: Tuple[int, ...],
    simplices: Tuple[Simplex, ...],
) -> Face:
    ids = tuple(sorted(vertex_ids))
    points = polytope.vertices[list(ids)]
    basis = _orthonormal_span(points[1:] - points[0], polytope.tolerance)
    return Face(
        dim=basis.shape[1],
        vertex_ids=ids,
        halfspace_ids=halfspace_ids,
        points=points,
        origin=points.mean(axis=0),
        basis=basis,
        simplices=simplices,
    )


def _fan(apex: np.ndarray, bases: Iterable[Face]) -> Tuple[Simplex, ...]:
    return tuple(
        Simplex(np.vstack([s.points, apex])) for face in bases for s in face.simplices
    )


def _build_face_lattice(polytope: Polytope) -> FaceLattice:
    """Closure of the facet vertex sets under intersection."""
    slack = polytope.normals @ polytope.vertices.T - polytope.offsets[:, None]
    incidence = np.abs(slack) <= 1e3 * polytope.tolerance
    facet_sets = [frozenset(np.flatnonzero(row).tolist()) for row in incidence]

    vertex_sets = set(facet_sets)
    frontier = set(facet_sets)
    while frontier:
        fresh = set()
        for face in frontier:
            for facet in facet_sets:
                meet = face & facet
                if meet and meet not in vertex_sets:
                    fresh.add(meet)
        vertex_sets |= fresh
        frontier = fresh
    vertex_sets |= {frozenset([i]) for i in range(len(polytope.vertices))}

    tol = polytope.tolerance
    by_dim: Dict[int, List[FrozenSet[int]]] = {}
    for vs in vertex_sets:
        d = affine_rank(polytope.vertices[sorted(vs)], 1e3 * tol)
        by_dim.setdefault(d, []).append(vs)

    faces_by_dim: Dict[int, Tuple[Face, ...]] = {}
    for d in range(polytope.dim):
        built: List[Face] = []
        sets = by_dim.get(d, [])
        if d == polytope.dim - 1:
            # facets in halfspace order
            sets = facet_sets
        else:
            sets = sorted(sets, key=lambda s: tuple(sorted(s)))
        for vs in sets:
            halfspace_ids = tuple(i for i, fs in enumerate(facet_sets) if vs <= fs)
            ids = sorted(vs)
            if d == 0 or len(ids) == d + 1:
                simplices: Tuple[Simplex, ...] = (Simplex(polytope.vertices[ids]),)
            else:
                children = [g for g in faces_by_dim[d - 1] if set(g.vertex_ids) <= vs]
                simplices = _fan(polytope.vertices[ids].mean(axis=0), children)
            built.append(_face_record(polytope, vs, halfspace_ids, simplices))
        faces_by_dim[d] = tuple(built)

    LOG.debug(
        "face lattice of %r: %s",
        polytope,
        {d: len(fs) for d, fs in faces_by_dim.items()},
    )
    return FaceLattice(faces_by_dim)


def face_lattice(polytope: Polytope) -> FaceLattice:
    return polytope.faces


def triangulate(polytope: Polytope, apex: Optional[int] = None) -> List[Simplex]:
    """
    Fan triangulation of the polytope.

    By default the fan is taken from the vertex centroid over the boundary
    triangulation; with `apex` a vertex index, from that vertex over the
    facets not containing it. A simplex is returned as itself.
    """
    if len(polytope.vertices) == polytope.dim + 1:
        return [Simplex(polytope.vertices)]
    facets = polytope.faces.facets
    if apex is None:
        return list(_fan(polytope.vertex_centroid, facets))
    return list(_fan(polytope.vertices[apex], [f for f in facets if apex not in f.vertex_ids]))


def triangulate_face(face: Face) -> List[Simplex]:
    return list(face.simplices)


def is_generic(polytope: Polytope, v: np.ndarray, delta: float = DELTA_GEN) -> bool:
    """|<u_i, v>| >= delta for every facet normal u_i."""
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    return bool(np.abs(polytope.normals @ v).min() >= delta)


def first_generic(
    polytope: Polytope, candidates: Iterable[np.ndarray], delta: float = DELTA_GEN
) -> np.ndarray:
    """First candidate direction that is generic with respect to the polytope."""
    for attempt, v in enumerate(candidates):
        v = np.asarray(v, dtype=float)
        length = np.linalg.norm(v)
        if length == 0:
            continue
        if is_generic(polytope, v, delta):
            LOG.debug("generic direction accepted after %d rejections", attempt)
            return v / length
    raise GenericityFailure(
        f"no generic direction with |<u_i, v>| >= {delta} among the candidates"
    )


def generic_direction(
    polytope: Polytope,
    seed: int = 0,
    delta: float = DELTA_GEN,
    attempts: int = GENERIC_ATTEMPTS,
) -> np.ndarray:
    """
    Deterministic generic direction.

    Candidates come from a scrambled Halton sequence mapped to the sphere
    through the normal quantile function, the first generic one wins.
    """
    sampler = qmc.Halton(d=polytope.dim, scramble=True, seed=seed)
    uniform = np.clip(sampler.random(attempts), 1e-12, 1 - 1e-12)
    return first_generic(polytope, norm.ppf(uniform), delta)


#
# Named bodies
#
def cube(n: int, a: float = 1.0) -> Polytope:
    """[-a, a]^n"""
    return from_vertices(list(itertools.product([-a, a], repeat=n)))


def standard_simplex(n: int) -> Polytope:
    """conv{0, e_1, ..., e_n}"""
    return from_vertices(np.vstack([np.zeros(n), np.eye(n)]))


def simplex(n: int) -> Polytope:
    """Regular simplex with edge length sqrt(2), centred at the origin."""
    corners = np.eye(n + 1) - 1.0 / (n + 1)
    # orthonormal basis of the hyperplane sum(x) = 0
    q, _ = np.linalg.qr(np.eye(n + 1) - 1.0 / (n + 1))
    return from_vertices(corners @ q[:, :n])


def regular_polygon(k: int, r: float = 1.0) -> Polytope:
    angles = 2 * np.pi * np.arange(k) / k
    return from_vertices(np.column_stack([r * np.cos(angles), r * np.sin(angles)]))


def cross_polytope(n: int) -> Polytope:
    return from_vertices(np.vstack([np.eye(n), -np.eye(n)]))
