"""
Moments, isotropic position, the isotropic constant and h-functions of
moment functionals phi(K) = g(int_K f_1, ..., int_K f_m).
"""
import enum
import logging
import threading
from dataclasses import dataclass, field
from typing import NamedTuple, Set, Tuple

import numpy as np

from polyperturb.errors import IllConditioned, NotIsotropic
from polyperturb.geometry import Polytope, standard_simplex, triangulate
from polyperturb.polynomial import AffineMap, Polynomial
from polyperturb.quadrature import integrate_simplex
from polyperturb.util import validate

__all__ = [
    "BodyMoments",
    "FunctionalKind",
    "CompositeMomentFunctional",
    "moments",
    "to_isotropic",
    "is_isotropic",
    "isotropic_constant",
    "integrate_all",
    "evaluate",
    "h_function",
]

LOG = logging.getLogger(__name__)

MAX_CONDITION = 1e8
ISOTROPY_TOL = 1e-7

# gradient rules already checked, shared by all threads
_VERIFIED: Set[Tuple["FunctionalKind", int, int]] = set()
_VERIFIED_LOCK = threading.Lock()


class BodyMoments(NamedTuple):
    """Volume, centroid and normalised covariance (1/vol) int_{K-c} x x^T."""

    volume: float
    centroid: np.ndarray
    covariance: np.ndarray


def integrate_all(polynomials: Tuple[Polynomial, ...], polytope: Polytope) -> np.ndarray:
    """Integrals of several polynomials sharing one triangulation."""
    simplices = triangulate(polytope)
    return np.array(
        [sum(integrate_simplex(p, s) for s in simplices) for p in polynomials]
    )


def _second_moment_polynomials(n: int) -> Tuple[Polynomial, ...]:
    one = Polynomial.constant(n, 1.0)
    xs = [Polynomial.coordinate(n, i) for i in range(n)]
    return tuple([one] + xs + [xs[i] * xs[j] for i in range(n) for j in range(i, n)])


def _symmetric(n: int, upper: np.ndarray) -> np.ndarray:
    mat = np.zeros((n, n))
    mat[np.triu_indices(n)] = upper
    return mat + np.triu(mat, 1).T


def moments(polytope: Polytope) -> BodyMoments:
    n = polytope.dim
    # integrate around the vertex centroid to keep the recentring well conditioned
    shift = polytope.vertex_centroid
    local = polytope.translated(-shift)
    raw = integrate_all(_second_moment_polynomials(n), local)
    vol = float(raw[0])
    mean = raw[1 : n + 1] / vol
    covariance = _symmetric(n, raw[n + 1 :] / vol) - np.outer(mean, mean)
    return BodyMoments(volume=vol, centroid=mean + shift, covariance=covariance)


def to_isotropic(
    polytope: Polytope, max_condition: float = MAX_CONDITION
) -> Tuple[Polytope, AffineMap]:
    """
    Isotropic image T(P - c_P) and the map x -> T(x - c_P).

    T is the symmetric inverse square root of the covariance.
    """
    mom = moments(polytope)
    evals, evecs = np.linalg.eigh(mom.covariance)
    validate(
        evals.min() > 0 and evals.max() / evals.min() <= max_condition,
        "covariance condition number {} exceeds {}",
        evals.max() / max(evals.min(), 1e-300),
        max_condition,
        error=IllConditioned,
    )
    whiten = (evecs / np.sqrt(evals)) @ evecs.T
    amap = AffineMap(whiten, -whiten @ mom.centroid)
    LOG.debug("isotropic map for %r: det %.6g", polytope, amap.determinant)
    return polytope.transformed(amap.matrix, amap.offset), amap


def is_isotropic(polytope: Polytope, tol: float = ISOTROPY_TOL) -> bool:
    mom = moments(polytope)
    return bool(
        np.abs(mom.centroid).max() <= tol
        and np.abs(mom.covariance - np.eye(polytope.dim)).max() <= tol
    )


def isotropic_constant(polytope: Polytope) -> float:
    """L_K = (det[int_{K-c} x_i x_j] / vol^{n+2})^{1/2n} = (det cov / vol^2)^{1/2n}."""
    mom = moments(polytope)
    value = np.linalg.det(mom.covariance) / mom.volume**2
    return float(value ** (1.0 / (2 * polytope.dim)))


class FunctionalKind(enum.Enum):
    ISOTROPIC_CONSTANT_2N = "lk"
    VOLUME = "volume"
    MOMENT_OF_INERTIA = "inertia"
    CENTROID = "centroid"


@dataclass(frozen=True)
class CompositeMomentFunctional:
    """
    phi(K) = g(int_K f_1, ..., int_K f_m) for a fixed registry of (g, f).

    - ISOTROPIC_CONSTANT_2N: f = (1, x_i x_j for i <= j), g = det(M) / m_0^{n+2}
      which is L_K^{2n} on centred bodies.
    - VOLUME: f = (1,), g = id.
    - MOMENT_OF_INERTIA: f = (||x||^2,), g = id.
    - CENTROID: f = (1, x_index), g = m_1 / m_0.
    """

    kind: FunctionalKind
    dim: int
    index: int = 0
    integrands: Tuple[Polynomial, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        validate(1 <= self.dim <= 4, "dimension {} not supported", self.dim)
        if self.kind is FunctionalKind.CENTROID:
            validate(
                0 <= self.index < self.dim, "centroid index {} out of range", self.index
            )
        object.__setattr__(
            self, "integrands", _functional_integrands(self.kind, self.dim, self.index)
        )
        key = (self.kind, self.dim, self.index)
        with _VERIFIED_LOCK:
            if key not in _VERIFIED:
                _check_gradient(self)
                _VERIFIED.add(key)

    @classmethod
    def isotropic_constant(cls, n: int) -> "CompositeMomentFunctional":
        return cls(FunctionalKind.ISOTROPIC_CONSTANT_2N, n)

    @classmethod
    def volume(cls, n: int) -> "CompositeMomentFunctional":
        return cls(FunctionalKind.VOLUME, n)

    @classmethod
    def moment_of_inertia(cls, n: int) -> "CompositeMomentFunctional":
        return cls(FunctionalKind.MOMENT_OF_INERTIA, n)

    @classmethod
    def centroid(cls, n: int, index: int) -> "CompositeMomentFunctional":
        return cls(FunctionalKind.CENTROID, n, index)

    @classmethod
    def from_name(cls, name: str, n: int, index: int = 0) -> "CompositeMomentFunctional":
        return cls(FunctionalKind(name), n, index)

    def combine(self, m: np.ndarray) -> float:
        """g(m)"""
        if self.kind is FunctionalKind.ISOTROPIC_CONSTANT_2N:
            n = self.dim
            return float(np.linalg.det(_symmetric(n, m[1:])) / m[0] ** (n + 2))
        if self.kind is FunctionalKind.CENTROID:
            return float(m[1] / m[0])
        return float(m[0])

    def gradient(self, m: np.ndarray) -> np.ndarray:
        """grad g(m)"""
        m = np.asarray(m, dtype=float)
        if self.kind is FunctionalKind.ISOTROPIC_CONSTANT_2N:
            n = self.dim
            mat = _symmetric(n, m[1:])
            value = self.combine(m)
            # d det / d M_ij is det * (M^-1)_ij, counted twice off the diagonal
            inv = np.linalg.inv(mat)
            weights = np.where(np.eye(n, dtype=bool), 1.0, 2.0)
            d_upper = (np.linalg.det(mat) * inv * weights)[np.triu_indices(n)]
            return np.concatenate([[-(n + 2) * value / m[0]], d_upper / m[0] ** (n + 2)])
        if self.kind is FunctionalKind.CENTROID:
            return np.array([-m[1] / m[0] ** 2, 1.0 / m[0]])
        return np.array([1.0])


def _check_gradient(phi: CompositeMomentFunctional) -> None:
    """Compare the hand-coded gradient with central differences on a centred simplex."""
    body = standard_simplex(phi.dim)
    body = body.translated(-moments(body).centroid)
    m = integrate_all(phi.integrands, body)
    grad = phi.gradient(m)
    scale = max(float(np.abs(grad).max()), 1e-300)
    for k in range(len(m)):
        step = 1e-6 * (abs(m[k]) or 1.0)
        up, down = m.copy(), m.copy()
        up[k] += step
        down[k] -= step
        fd = (phi.combine(up) - phi.combine(down)) / (2 * step)
        validate(
            abs(fd - grad[k]) <= 1e-5 * scale,
            "gradient rule of {} disagrees with finite differences in component {}",
            phi.kind.value,
            k,
        )


def _functional_integrands(kind: FunctionalKind, dim: int, index: int) -> Tuple[Polynomial, ...]:
    one = Polynomial.constant(dim, 1.0)
    if kind is FunctionalKind.ISOTROPIC_CONSTANT_2N:
        xs = [Polynomial.coordinate(dim, i) for i in range(dim)]
        return tuple([one] + [xs[i] * xs[j] for i in range(dim) for j in range(i, dim)])
    if kind is FunctionalKind.VOLUME:
        return (one,)
    if kind is FunctionalKind.MOMENT_OF_INERTIA:
        return (Polynomial.norm_squared(dim),)
    return (one, Polynomial.coordinate(dim, index))


def evaluate(phi: CompositeMomentFunctional, polytope: Polytope) -> float:
    """phi(P); the isotropic-constant functional is evaluated on the centred body."""
    if phi.kind is FunctionalKind.ISOTROPIC_CONSTANT_2N:
        polytope = polytope.translated(-moments(polytope).centroid)
    return phi.combine(integrate_all(phi.integrands, polytope))


def h_function(
    phi: CompositeMomentFunctional, polytope: Polytope, tol: float = ISOTROPY_TOL
) -> Polynomial:
    """
    h = sum_i (dg/dm_i)(int_P f_1, ...) f_i.

    For the isotropic constant at an isotropic body this is
    (||x||^2 - n - 2) / vol^3.
    """
    if phi.kind is FunctionalKind.ISOTROPIC_CONSTANT_2N:
        validate(
            is_isotropic(polytope, tol),
            "h-function of the isotropic constant needs an isotropic body",
            error=NotIsotropic,
        )
    grad = phi.gradient(integrate_all(phi.integrands, polytope))
    h = Polynomial.zero(polytope.dim)
    for g_k, f_k in zip(grad, phi.integrands):
        h = h + float(g_k) * f_k
    return h
