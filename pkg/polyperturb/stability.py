"""
First-order stability of polytopes under small perturbations.

The boundary of P carries vol_Phi: the dim-volume on every proper face and
counting measure on the vertices. For a moment functional phi with h-function
h, P is first-order stable when <h, g> <= 0 for every direction g in the cone
of small perturbations. The cone splits over the faces:

- facets carry concave densities, discretised here as concave
  piecewise-linear functions on a refined triangulation of the facet;
- faces of dimension k < n - 1 carry -((a.w + b)_+)^(n - k);
- vertices carry negative point masses.

Affine facet densities are reversible; pairing h with them gives the
equality conditions of `reversible_check`.
"""
import csv
import functools
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from math import factorial, sqrt
from typing import (
    Dict,
    Iterable,
    List,
    Mapping,
    NamedTuple,
    Optional,
    Sequence,
    TextIO,
    Tuple,
    Union,
)

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize, nnls

from polyperturb.errors import (
    DegenerateInput,
    DimensionMismatch,
    SolverStalled,
    TriangulationMismatch,
)
from polyperturb.geometry import (
    Face,
    Polytope,
    Simplex,
    affine_rank,
    clip_points,
    from_vertices,
    generic_direction,
    same_vertices,
    triangulate,
)
from polyperturb.isotropy import ISOTROPY_TOL, CompositeMomentFunctional, evaluate, h_function
from polyperturb.metrics import CERTIFICATES, PROJECTION_ITERATIONS, PROJECTION_STALLED
from polyperturb.models import (
    FacetProjection,
    FacetResidual,
    LowerFaceCertificate,
    SlopeComparison,
    SlopeSample,
    StabilityReport,
    Verdict,
)
from polyperturb.perturbation import (
    DiscretePerturbation,
    build_family,
    compare_slopes,
    density_from_nodes,
    family_at,
)
from polyperturb.polynomial import AffineMap, Polynomial
from polyperturb.quadrature import integrate_face, integrate_simplex
from polyperturb.util import validate

__all__ = [
    "FaceMesh",
    "NodalValues",
    "BoundaryFunction",
    "ConeElement",
    "boundary_inner_product",
    "reversible_check",
    "facet_moment_condition",
    "project_concave",
    "facet_cone_projection",
    "lower_face_search",
    "stability_report",
    "first_order_crosscheck",
    "write_residuals_csv",
]

LOG = logging.getLogger(__name__)
# per-cycle solver output, only enabled at the highest verbosity
SOLVER_LOG = logging.getLogger(__name__ + ".solver")

STABILITY_TOL = 1e-6
KKT_TOL = 1e-7
MAX_PROJECTION_ITER = 20_000
REFINEMENT = 4
RESTARTS = 8
POLISH_EVERY = 10


@functools.lru_cache(maxsize=None)
def _lattice_simplices(dim: int, refinement: int) -> np.ndarray:
    """
    Kuhn subdivision of {1 >= y_1 >= ... >= y_dim >= 0} into refinement^dim
    simplices, shape (refinement^dim, dim + 1, dim).
    """
    res = []
    for base in itertools.product(range(refinement), repeat=dim):
        for order in itertools.permutations(range(dim)):
            corner = np.array(base)
            corners = [corner.copy()]
            for axis in order:
                corner[axis] += 1
                corners.append(corner.copy())
            if all((np.diff(c) <= 0).all() for c in corners):
                res.append(corners)
    arr = np.array(res, dtype=float).reshape(-1, dim + 1, dim) / refinement
    arr.setflags(write=False)
    return arr


class FaceMesh:
    """
    Refined triangulation of a face, in the face chart.

    Each simplex of the face triangulation is split edgewise into
    refinement^dim simplices with nodes shared between neighbours. The mesh
    carries the P1 mass matrix and one hinge row per interior
    (dim - 1)-simplex, normalised so that a piecewise-linear g is concave iff
    hinges @ g <= 0.
    """

    def __init__(self, face: Face, refinement: int) -> None:
        validate(face.dim >= 1, "vertices carry no mesh", error=TriangulationMismatch)
        validate(refinement >= 1, "refinement should be >= 1, got {}", refinement)
        self.face = face
        self.refinement = refinement

        lattice = _lattice_simplices(face.dim, refinement)
        index: Dict[Tuple[float, ...], int] = {}
        nodes: List[np.ndarray] = []
        cells: List[List[int]] = []
        for s in face.simplices:
            corners = face.to_chart(s.points)
            steps = np.diff(corners, axis=0)
            for ys in lattice:
                ids = []
                for pt in corners[0] + ys @ steps:
                    key = tuple(np.round(pt, 9))
                    if key not in index:
                        index[key] = len(nodes)
                        nodes.append(pt)
                    ids.append(index[key])
                cells.append(ids)
        self.nodes = np.array(nodes)
        self.simplices = np.array(cells, dtype=int)
        self.mass = self._mass_matrix()
        self.hinges = self._hinge_rows()

    def __len__(self) -> int:
        return len(self.nodes)

    def __repr__(self) -> str:
        return (
            f"FaceMesh(face={list(self.face.vertex_ids)}, nodes={len(self)}, "
            f"simplices={len(self.simplices)}, hinges={len(self.hinges)})"
        )

    @property
    def dim(self) -> int:
        return self.face.dim

    def chart_simplices(self) -> np.ndarray:
        return self.nodes[self.simplices]

    def volumes(self) -> np.ndarray:
        cells = self.chart_simplices()
        edges = cells[:, 1:, :] - cells[:, :1, :]
        return np.abs(np.linalg.det(edges)) / factorial(self.dim)

    def _mass_matrix(self) -> np.ndarray:
        d = self.dim
        # int phi_i phi_j = vol (1 + delta_ij) / ((d + 1)(d + 2))
        local = (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))
        mass = np.zeros((len(self), len(self)))
        for ids, vol in zip(self.simplices, self.volumes()):
            mass[np.ix_(ids, ids)] += vol * local
        return mass

    def _hinge_rows(self) -> np.ndarray:
        d = self.dim
        shared: Dict[Tuple[int, ...], List[Tuple[int, int]]] = {}
        for s, ids in enumerate(self.simplices):
            for j in range(d + 1):
                ridge = tuple(sorted(int(k) for k in np.delete(ids, j)))
                shared.setdefault(ridge, []).append((s, int(ids[j])))

        rows = []
        for ridge in sorted(shared):
            pair = shared[ridge]
            if len(pair) != 2:
                continue
            (s, _), (_, opposite) = pair
            ids = self.simplices[s]
            # barycentric coordinates of the opposite node in simplex s
            lhs = np.vstack([self.nodes[ids].T, np.ones(d + 1)])
            lam = np.linalg.solve(lhs, np.append(self.nodes[opposite], 1.0))
            # g(opposite) <= affine extension of g from simplex s
            row = np.zeros(len(self))
            row[opposite] += 1.0
            row[ids] -= lam
            rows.append(row / np.linalg.norm(row))
        return np.array(rows).reshape(-1, len(self))

    def load(self, p: Polynomial) -> np.ndarray:
        """(int_F p phi_i)_i for the hat functions phi_i."""
        local = p.compose(AffineMap.chart(self.face.origin, self.face.basis))
        res = np.zeros(len(self))
        hats = np.eye(self.dim + 1)
        for ids in self.simplices:
            s = Simplex(self.nodes[ids])
            for j in range(self.dim + 1):
                res[ids[j]] += integrate_simplex(local, s, nodal=hats[j])
        return res

    def interpolate(self, p: Polynomial) -> np.ndarray:
        return np.asarray(p.evaluate(self.face.from_chart(self.nodes)), dtype=float).reshape(-1)

    def max_hinge(self, values: np.ndarray) -> float:
        """Largest concavity violation, <= 0 for concave node values."""
        if len(self.hinges) == 0:
            return 0.0
        return float((self.hinges @ values).max())


class NodalValues(NamedTuple):
    """Piecewise-linear function given by its values at the mesh nodes."""

    mesh: FaceMesh
    values: np.ndarray


FaceValue = Union[Polynomial, NodalValues]


class BoundaryFunction:
    """
    Function on the boundary of a polytope, face by face.

    Keys are face vertex ids; each face carries a polynomial (in ambient
    coordinates) or node values on a mesh of the face. Missing faces are 0.
    """

    def __init__(self, polytope: Polytope, values: Mapping[Tuple[int, ...], FaceValue]) -> None:
        lattice = polytope.faces
        checked: Dict[Tuple[int, ...], FaceValue] = {}
        for key, value in values.items():
            face = lattice.find(key)
            validate(face is not None, "{} is not a face", list(key), error=TriangulationMismatch)
            if isinstance(value, NodalValues):
                validate(
                    value.mesh.face.vertex_ids == face.vertex_ids,
                    "mesh of face {} attached to face {}",
                    list(value.mesh.face.vertex_ids),
                    list(face.vertex_ids),
                    error=TriangulationMismatch,
                )
                vals = np.asarray(value.values, dtype=float).reshape(-1)
                validate(
                    len(vals) == len(value.mesh),
                    "{} node values for a mesh with {} nodes",
                    len(vals),
                    len(value.mesh),
                    error=TriangulationMismatch,
                )
                value = NodalValues(value.mesh, vals)
            else:
                validate(
                    value.dim == polytope.dim,
                    "polynomial in {} variables on a polytope in R^{}",
                    value.dim,
                    polytope.dim,
                    error=DimensionMismatch,
                )
            checked[face.vertex_ids] = value
        self.polytope = polytope
        self.values = checked

    def __repr__(self) -> str:
        return f"BoundaryFunction({self.polytope!r}, faces={len(self.values)})"

    @classmethod
    def from_polynomial(
        cls, polytope: Polytope, p: Polynomial, dims: Optional[Iterable[int]] = None
    ) -> "BoundaryFunction":
        """p on every proper face, or on the faces of the given dimensions."""
        lattice = polytope.faces
        dims = range(polytope.dim) if dims is None else dims
        return cls(polytope, {f.vertex_ids: p for d in dims for f in lattice.faces(d)})

    def on(self, face: Face) -> Optional[FaceValue]:
        return self.values.get(face.vertex_ids)

    def norm(self) -> float:
        return sqrt(max(boundary_inner_product(self, self), 0.0))


def _face_product(face: Face, f: FaceValue, g: FaceValue) -> float:
    if isinstance(f, NodalValues) and isinstance(g, NodalValues):
        validate(
            f.mesh is g.mesh
            or (len(f.mesh) == len(g.mesh) and np.allclose(f.mesh.nodes, g.mesh.nodes)),
            "node values of face {} live on different meshes",
            list(face.vertex_ids),
            error=TriangulationMismatch,
        )
        return float(f.values @ f.mesh.mass @ g.values)
    if isinstance(f, NodalValues):
        return float(f.mesh.load(g) @ f.values)
    if isinstance(g, NodalValues):
        return float(g.mesh.load(f) @ g.values)
    if face.dim == 0:
        point = face.points[0]
        return float(f.evaluate(point)) * float(g.evaluate(point))
    return integrate_face(f * g, face)


def boundary_inner_product(
    f: BoundaryFunction, g: BoundaryFunction, polytope: Optional[Polytope] = None
) -> float:
    """sum over proper faces of int_face f g d vol_dim (vertices: f(v) g(v))."""
    polytope = f.polytope if polytope is None else polytope
    for h in (f, g):
        validate(
            h.polytope is polytope or same_vertices(h.polytope, polytope),
            "boundary function lives on a different polytope",
            error=TriangulationMismatch,
        )
    lattice = polytope.faces
    total = 0.0
    for key in sorted(set(f.values) & set(g.values)):
        total += _face_product(lattice.find(key), f.values[key], g.values[key])
    return total


def _chart_coordinate(face: Face, k: int) -> np.ndarray:
    row = np.zeros((1, face.dim + 1))
    row[0, k] = 1.0
    return row


def reversible_check(
    polytope: Polytope, phi: CompositeMomentFunctional, tol: float = ISOTROPY_TOL
) -> List[FacetResidual]:
    """
    Pairings of h with the affine functions on each facet.

    `raw` uses 1, x_1, ..., x_n; `projected` uses 1 and the n - 1 chart
    coordinates, a basis of the affine functions on the facet.
    """
    h = h_function(phi, polytope, tol)
    n = polytope.dim
    xs = [Polynomial.coordinate(n, i) for i in range(n)]
    res = []
    for i, face in enumerate(polytope.faces.facets):
        raw = [integrate_face(h, face)] + [integrate_face(h * x, face) for x in xs]
        projected = [raw[0]] + [
            integrate_face(h, face, _chart_coordinate(face, k)) for k in range(face.dim)
        ]
        res.append(FacetResidual(i, raw, projected, float(np.linalg.norm(projected))))
        LOG.debug("facet %d: reversible residual %.3e", i, res[-1].norm)
    return res


def facet_moment_condition(polytope: Polytope) -> List[np.ndarray]:
    """E[|X|^2 X] - (n + 2) E[X] for X uniform on each facet."""
    n = polytope.dim
    square = Polynomial.norm_squared(n)
    xs = [Polynomial.coordinate(n, i) for i in range(n)]
    res = []
    for face in polytope.faces.facets:
        vol = face.volume
        first = np.array([integrate_face(x, face) for x in xs]) / vol
        third = np.array([integrate_face(square * x, face) for x in xs]) / vol
        res.append(third - (n + 2) * first)
    return res


#
# Cone projection
#
def _polish(factor: Dict[str, np.ndarray], slack: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """
    Exact multipliers for the constraints that are active or violated.

    With M = L L^T and R = L^-1 C_A^T the dual on that set is the
    nonnegative least squares problem min_{alpha >= 0} |R alpha - L^T x0|.
    """
    active = (alpha > 0) | (slack - factor["gram"] @ alpha > 0)
    res = np.zeros_like(alpha)
    if not active.any():
        return res
    res[active], _ = nnls(factor["r"][:, active], factor["rhs"])
    return res


def project_concave(
    mesh: FaceMesh,
    load: np.ndarray,
    kkt_tol: float = KKT_TOL,
    max_iter: int = MAX_PROJECTION_ITER,
) -> Tuple[np.ndarray, int, float]:
    """
    Nearest concave piecewise-linear g, in L2 of the face, to the function
    whose load vector (int h phi_i)_i is `load`.

    Minimises g.M.g - 2 load.g over {hinges @ g <= 0}: Dykstra's algorithm in
    the M-metric started from the unconstrained minimiser M^-1 load. The
    projection onto hinge k moves along M^-1 c_k, so the Dykstra increments
    are multiples of these directions and only their coefficients (the dual
    multipliers) are stored. Every few cycles the constraints that are active
    or violated are solved exactly.

    The problem is solved for h / |M^-1 load|_M; returns (g, cycles, KKT
    residual of the normalised problem).
    """
    cho = cho_factor(mesh.mass, lower=True)
    target = cho_solve(cho, load)
    scale = sqrt(max(float(target @ load), 0.0))
    hinges = mesh.hinges
    if scale == 0.0 or len(hinges) == 0:
        return target, 0, 0.0

    x0 = target / scale
    directions = cho_solve(cho, hinges.T)
    gram = hinges @ directions
    slack = hinges @ x0
    diag = np.diag(gram)
    lower = np.tril(cho[0])
    factor = {
        "gram": gram,
        "r": np.linalg.solve(lower, hinges.T),
        "rhs": lower.T @ x0,
    }

    def kkt(alpha: np.ndarray) -> float:
        cx = slack - gram @ alpha
        return max(float(cx.max()), 0.0, float(np.abs(alpha * cx).max()))

    alpha = np.zeros(len(hinges))
    residual = kkt(alpha)
    cycle = 0
    while residual > kkt_tol and cycle < max_iter:
        cycle += 1
        for k in range(len(alpha)):
            alpha[k] = max(0.0, alpha[k] + (slack[k] - gram[k] @ alpha) / diag[k])
        residual = kkt(alpha)
        if residual > kkt_tol and cycle % POLISH_EVERY == 0:
            polished = _polish(factor, slack, alpha)
            polished_residual = kkt(polished)
            if polished_residual < residual:
                alpha, residual = polished, polished_residual
        SOLVER_LOG.debug(
            "cycle %d: kkt residual %.3e, %d active hinges", cycle, residual, int((alpha > 0).sum())
        )

    PROJECTION_ITERATIONS.observe(cycle)
    if residual > kkt_tol:
        PROJECTION_STALLED.inc()
        raise SolverStalled(
            f"cone projection stalled after {cycle} cycles at KKT residual {residual:.3e}"
        )
    return scale * (x0 - directions @ alpha), cycle, residual


def _project_facet(
    index: int,
    face: Face,
    value: Optional[FaceValue],
    refinement: int,
    kkt_tol: float,
    max_iter: int,
) -> Tuple[FacetProjection, NodalValues]:
    if isinstance(value, NodalValues):
        mesh = value.mesh
        load = mesh.mass @ value.values
        h_squared = float(value.values @ load)
    else:
        mesh = FaceMesh(face, refinement)
        if value is None:
            load, h_squared = np.zeros(len(mesh)), 0.0
        else:
            load, h_squared = mesh.load(value), integrate_face(value * value, face)

    g, cycles, residual = project_concave(mesh, load, kkt_tol, max_iter)
    g_squared = float(g @ mesh.mass @ g)
    paired = float(load @ g)
    objective = max(h_squared - 2.0 * paired + g_squared, 0.0)
    pairing = paired / sqrt(g_squared) if g_squared > 0 else 0.0
    LOG.debug("facet %d: objective %.6g after %d cycles", index, objective, cycles)
    return FacetProjection(index, objective, cycles, residual, pairing), NodalValues(mesh, g)


class ConeElement:
    """
    Direction in the cone of small perturbations.

    Facet parts are concave node values on facet meshes; lower-face parts
    are the densities -((a.w + b)_+)^(n - dim) of the given certificates
    (vertices: -delta_v).
    """

    def __init__(
        self,
        polytope: Polytope,
        facets: Mapping[int, NodalValues],
        lower: Sequence[LowerFaceCertificate] = (),
    ) -> None:
        self.polytope = polytope
        self.facets = dict(sorted(facets.items()))
        self.lower = tuple(lower)

    def __repr__(self) -> str:
        return f"ConeElement(facets={list(self.facets)}, lower={len(self.lower)})"

    def boundary_function(self) -> BoundaryFunction:
        """Facet part as a boundary function."""
        facets = self.polytope.faces.facets
        return BoundaryFunction(
            self.polytope, {facets[i].vertex_ids: value for i, value in self.facets.items()}
        )

    def norm(self) -> float:
        return sqrt(sum(float(v.values @ v.mesh.mass @ v.values) for v in self.facets.values()))

    def is_zero(self) -> bool:
        return not self.lower and all(not v.values.any() for v in self.facets.values())

    def max_hinge(self) -> float:
        return max((v.mesh.max_hinge(v.values) for v in self.facets.values()), default=0.0)

    def scaled(self, factor: float) -> "ConeElement":
        validate(factor >= 0, "cone elements scale by nonnegative factors, got {}", factor)
        return ConeElement(
            self.polytope,
            {i: NodalValues(v.mesh, factor * v.values) for i, v in self.facets.items()},
            self.lower,
        )

    def to_perturbation(self) -> DiscretePerturbation:
        """Facet part as a discrete perturbation (min-of-affines densities)."""
        densities = [
            density_from_nodes(
                self.polytope,
                i,
                v.mesh.chart_simplices(),
                v.values[v.mesh.simplices],
                eps=self.polytope.eps,
            )
            for i, v in self.facets.items()
            if v.values.any()
        ]
        return DiscretePerturbation(self.polytope, densities, eps=self.polytope.eps)

    def as_json(self) -> Dict[str, object]:
        return {
            "facets": [
                {
                    "facet": i,
                    "refinement": v.mesh.refinement,
                    "nodes": v.mesh.nodes,
                    "values": v.values,
                }
                for i, v in self.facets.items()
            ],
            "lower": list(self.lower),
        }


def facet_cone_projection(
    polytope: Polytope,
    h: BoundaryFunction,
    refinement: int = REFINEMENT,
    kkt_tol: float = KKT_TOL,
    max_iter: int = MAX_PROJECTION_ITER,
    threads: int = 1,
) -> Tuple[float, ConeElement, List[FacetProjection]]:
    """
    Metric projection of h onto the concave facet densities.

    The cone is a direct sum over facets, so each facet is projected on its
    own (in parallel with threads > 1). Returns the total objective
    |h - g*|^2 over the facets, g* and the per-facet records.
    """
    validate(refinement >= 1, "refinement should be >= 1, got {}", refinement)
    facets = polytope.faces.facets

    def run(i: int) -> Tuple[FacetProjection, NodalValues]:
        return _project_facet(i, facets[i], h.on(facets[i]), refinement, kkt_tol, max_iter)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, range(len(facets))))
    else:
        results = [run(i) for i in range(len(facets))]

    projections = [r[0] for r in results]
    element = ConeElement(polytope, {i: r[1] for i, r in enumerate(results)})
    objective = float(sum(p.objective for p in projections))
    LOG.info("facet cone projection: objective %.6g at refinement %d", objective, refinement)
    return objective, element, projections


#
# Lower faces
#
def _normalised_pairing(
    local: Polynomial, corners: np.ndarray, theta: np.ndarray, exponent: int
) -> float:
    """<h, g> / |g| for g = -((a.w + b)_+)^exponent, (a, b) = theta / |theta|."""
    length = float(np.linalg.norm(theta))
    if length == 0.0:
        return 0.0
    a, b = theta[:-1] / length, float(theta[-1]) / length
    # support of g: a.w + b >= 0
    points = clip_points(corners, -a, b)
    dim = len(a)
    if len(points) <= dim or affine_rank(points, 1e-12) < dim:
        return 0.0
    try:
        cell = from_vertices(points)
    except DegenerateInput:
        return 0.0
    power = Polynomial.linear(a, b) ** exponent
    simplices = triangulate(cell)
    paired = -sum(integrate_simplex(local * power, s) for s in simplices)
    norm_sq = sum(integrate_simplex(power * power, s) for s in simplices)
    return paired / sqrt(norm_sq) if norm_sq > 1e-300 else 0.0


def _search_face(
    face: Face, h: Polynomial, exponent: int, starts: np.ndarray
) -> LowerFaceCertificate:
    local = h.compose(AffineMap.chart(face.origin, face.basis))
    corners = face.to_chart(face.points)

    def objective(theta: np.ndarray) -> float:
        return -_normalised_pairing(local, corners, theta, exponent)

    # g = -1 on the whole face first, then the random restarts
    candidates = [np.append(np.zeros(face.dim), 1.0)] + list(starts)
    best_value, best_theta = -np.inf, candidates[0]
    for x0 in candidates:
        res = minimize(
            objective,
            x0,
            method="Nelder-Mead",
            options={"xatol": 1e-7, "fatol": 1e-12, "maxiter": 200 * (face.dim + 1)},
        )
        if -res.fun > best_value:
            best_value, best_theta = float(-res.fun), res.x
    theta = best_theta / max(float(np.linalg.norm(best_theta)), 1e-300)
    return LowerFaceCertificate(
        face.dim, face.vertex_ids, theta[:-1].tolist(), float(theta[-1]), best_value
    )


def lower_face_search(
    polytope: Polytope,
    h: BoundaryFunction,
    restarts: int = RESTARTS,
    seed: int = 0,
    threads: int = 1,
) -> List[LowerFaceCertificate]:
    """
    Best normalised pairing <h, g> / |g| per face of dimension < n - 1.

    Vertices are exact: g = -delta_v pairs to -h(v). Other faces run
    Nelder-Mead over (a, b) from `restarts` random starts plus g = -1. The
    search is heuristic; a positive value is still a valid certificate.
    """
    n = polytope.dim
    lattice = polytope.faces
    res = []
    for face in lattice.faces(0):
        value = h.on(face)
        hv = float(value.evaluate(face.points[0])) if isinstance(value, Polynomial) else 0.0
        res.append(LowerFaceCertificate(0, face.vertex_ids, [], 1.0, -hv))

    faces = [
        f for k in range(1, n - 1) for f in lattice.faces(k) if isinstance(h.on(f), Polynomial)
    ]
    rng = np.random.default_rng(seed)
    starts = [rng.standard_normal((restarts, f.dim + 1)) for f in faces]

    def run(i: int) -> LowerFaceCertificate:
        face = faces[i]
        return _search_face(face, h.on(face), n - face.dim, starts[i])

    if threads > 1 and len(faces) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            res.extend(pool.map(run, range(len(faces))))
    else:
        res.extend(run(i) for i in range(len(faces)))
    return res


#
# Report
#
def stability_report(
    polytope: Polytope,
    phi: CompositeMomentFunctional,
    refinement: int = REFINEMENT,
    restarts: int = RESTARTS,
    stability_tol: float = STABILITY_TOL,
    kkt_tol: float = KKT_TOL,
    isotropy_tol: float = ISOTROPY_TOL,
    max_projection_iter: int = MAX_PROJECTION_ITER,
    seed: int = 0,
    threads: int = 1,
) -> StabilityReport:
    """
    First-order analysis of phi at P.

    Unstable when some certified cone direction g has
    <h, g> > stability_tol |h| |g|; weakly stable within tolerance when the
    reversible residuals vanish and no such direction was found; otherwise
    inconclusive. Weak stability only means no counterexample at this
    refinement and with this many restarts.
    """
    residuals = reversible_check(polytope, phi, isotropy_tol)
    max_residual = max(r.norm for r in residuals)
    h = BoundaryFunction.from_polynomial(polytope, h_function(phi, polytope, isotropy_tol))
    h_norm = h.norm()
    threshold = stability_tol * h_norm

    stalled = False
    try:
        objective, element, projections = facet_cone_projection(
            polytope, h, refinement, kkt_tol, max_projection_iter, threads
        )
    except SolverStalled as err:
        LOG.warning("%s", err)
        stalled = True
        objective, element, projections = float("nan"), ConeElement(polytope, {}), []
    lower = lower_face_search(polytope, h, restarts, seed, threads)

    candidates: List[Tuple[float, str, ConeElement]] = []
    g_norm = element.norm()
    facet_pairing = 0.0
    if g_norm > 0:
        facet_pairing = boundary_inner_product(h, element.boundary_function()) / g_norm
    if facet_pairing > threshold and element.max_hinge() <= kkt_tol * max(h_norm, 1e-300):
        candidates.append((facet_pairing, "facet", element))
    for cert in lower:
        if cert.pairing > threshold:
            kind = "vertex" if cert.dim == 0 else f"{cert.dim}-face"
            candidates.append((cert.pairing, kind, ConeElement(polytope, {}, [cert])))
    for _, kind, _ in candidates:
        CERTIFICATES.labels(kind="facet" if kind == "facet" else "lower").inc()

    pairing = max([facet_pairing] + [c.pairing for c in lower])
    direction: Optional[ConeElement] = None
    certificate: Optional[str] = None
    if candidates:
        best, kind, direction = max(candidates, key=lambda c: c[0])
        certificate = (
            kind if kind == "facet" else f"{kind} {list(direction.lower[0].vertex_ids)}"
        )
        verdict = Verdict.UNSTABLE
        LOG.info("certificate on %s with normalised pairing %.6g", certificate, best)
    elif stalled or max_residual >= kkt_tol:
        verdict = Verdict.INCONCLUSIVE
    else:
        verdict = Verdict.WEAKLY_STABLE

    return StabilityReport(
        functional=phi.kind.value,
        refinement=refinement,
        restarts=restarts,
        residuals=residuals,
        max_residual=max_residual,
        projection_objective=objective,
        projections=projections,
        lower_faces=lower,
        pairing=pairing,
        certificate=certificate,
        direction=direction,
        verdict=verdict,
    )


def first_order_crosscheck(
    polytope: Polytope,
    phi: CompositeMomentFunctional,
    g: ConeElement,
    t_grid: Sequence[float],
    v: Optional[Sequence[float]] = None,
    seed: int = 0,
    isotropy_tol: float = ISOTROPY_TOL,
) -> SlopeComparison:
    """
    (phi(P_t) - phi(P)) / t along the family realising the facet part of g,
    against the predicted slope <h, g>.
    """
    h = BoundaryFunction.from_polynomial(polytope, h_function(phi, polytope, isotropy_tol))
    target = boundary_inner_product(h, g.boundary_function())
    mu = g.to_perturbation()
    direction = generic_direction(polytope, seed) if v is None else np.asarray(v, dtype=float)
    family = build_family(polytope, mu, direction)
    base = evaluate(phi, polytope)
    samples = [
        SlopeSample(t, (evaluate(phi, family_at(family, t)) - base) / t) for t in t_grid
    ]
    comparison = compare_slopes(samples, target)
    LOG.info(
        "first-order cross-check: predicted %.6g, quotients %s",
        target,
        ", ".join(f"{s.quotient:.6g}" for s in samples),
    )
    return comparison


def write_residuals_csv(report: StabilityReport, stream: TextIO) -> None:
    """One row per facet: reversible residuals and projection data."""
    n = len(report.residuals[0].raw) - 1 if report.residuals else 0
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(
        ["facet", "norm"]
        + [f"raw_{k}" for k in range(n + 1)]
        + [f"projected_{k}" for k in range(n)]
        + ["objective", "pairing"]
    )
    projections = {p.facet: p for p in report.projections}
    for r in report.residuals:
        proj = projections.get(r.facet)
        writer.writerow(
            [r.facet, repr(r.norm)]
            + [repr(float(x)) for x in r.raw]
            + [repr(float(x)) for x in r.projected]
            + ([repr(proj.objective), repr(proj.pairing)] if proj else ["", ""])
        )
