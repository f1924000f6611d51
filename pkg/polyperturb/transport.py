"""
Signed atomic measures and transport distances between them.

Small problems are solved as dense linear programs with HiGHS; above
`dense_lp_atoms` atoms per side the network simplex of POT takes over. The
generalized (partial) problem is reduced to a balanced one on the network
kernel by adding one dummy atom on each side.
"""
import logging
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
import ot
from scipy import sparse
from scipy.optimize import linprog
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from polyperturb.errors import MassMismatch, NegativeWeight, TooManyAtoms
from polyperturb.metrics import LP_SOLVES
from polyperturb.util import validate

__all__ = [
    "SignedAtomicMeasure",
    "TransferencePlan",
    "jordan_decompose",
    "tv_norm",
    "wasserstein",
    "partial_transport",
    "generalized_wasserstein",
    "wasserstein_norm",
]

LOG = logging.getLogger(__name__)

EPS_GEO = 1e-9
MAX_ATOMS = 10_000
DENSE_LP_ATOMS = 200
MASS_TOL = 1e-9


class SignedAtomicMeasure:
    """
    Finite sum of weighted Dirac masses.

    Atoms closer than eps are merged (weights summed), cancelled atoms are
    dropped and the remaining atoms are sorted lexicographically, so equal
    measures have equal representations.
    """

    def __init__(
        self,
        points: Sequence[Sequence[float]],
        weights: Sequence[float],
        dim: Optional[int] = None,
        eps: float = EPS_GEO,
        max_atoms: int = MAX_ATOMS,
    ) -> None:
        weights = np.asarray(weights, dtype=float).reshape(-1)
        if dim is None:
            validate(len(weights) > 0, "dimension of an empty measure is unknown")
            dim = np.asarray(points[0]).shape[0]
        points = np.asarray(points, dtype=float).reshape(len(weights), dim)
        validate(
            len(weights) <= max_atoms,
            "{} atoms exceed the cap of {}",
            len(weights),
            max_atoms,
            error=TooManyAtoms,
        )
        validate(bool(np.isfinite(weights).all()), "non-finite atom weight")

        self.dim = dim
        self.eps = eps
        self.points, self.weights = self._normalize(points, weights, eps)

    @staticmethod
    def _normalize(
        points: np.ndarray, weights: np.ndarray, eps: float
    ) -> Tuple[np.ndarray, np.ndarray]:
        if len(weights) == 0:
            return points, weights
        # union-find over pairs closer than eps, the lowest index is the root
        parent = list(range(len(weights)))

        def root(i: int) -> int:
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for i, j in sorted(cKDTree(points).query_pairs(eps)):
            ri, rj = root(i), root(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
        roots = np.array([root(i) for i in range(len(weights))])
        keep = np.unique(roots)
        merged = np.array([weights[roots == r].sum() for r in keep])
        merged_points = points[keep]

        scale = max(1.0, float(np.abs(weights).max()))
        nonzero = np.abs(merged) > 1e-14 * scale
        merged_points, merged = merged_points[nonzero], merged[nonzero]
        order = np.lexsort(merged_points.T[::-1]) if len(merged) else np.arange(0)
        return merged_points[order], merged[order]

    @classmethod
    def empty(cls, dim: int) -> "SignedAtomicMeasure":
        return cls(np.zeros((0, dim)), [], dim=dim)

    @classmethod
    def dirac(cls, point: Sequence[float], weight: float = 1.0) -> "SignedAtomicMeasure":
        return cls([point], [weight])

    def __len__(self) -> int:
        return len(self.weights)

    def __repr__(self) -> str:
        return f"SignedAtomicMeasure(dim={self.dim}, atoms={len(self)}, mass={self.mass:.6g})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SignedAtomicMeasure):
            return NotImplemented
        return (
            self.dim == other.dim
            and len(self) == len(other)
            and bool(np.array_equal(self.points, other.points))
            and bool(np.array_equal(self.weights, other.weights))
        )

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @property
    def is_positive(self) -> bool:
        return bool((self.weights >= 0).all())

    def is_zero(self) -> bool:
        return len(self) == 0

    def __add__(self, other: "SignedAtomicMeasure") -> "SignedAtomicMeasure":
        validate(other.dim == self.dim, "cannot add measures on R^{} and R^{}", self.dim, other.dim)
        return SignedAtomicMeasure(
            np.vstack([self.points, other.points]),
            np.concatenate([self.weights, other.weights]),
            dim=self.dim,
            eps=self.eps,
            max_atoms=max(MAX_ATOMS, len(self) + len(other)),
        )

    def __neg__(self) -> "SignedAtomicMeasure":
        return self * -1.0

    def __sub__(self, other: "SignedAtomicMeasure") -> "SignedAtomicMeasure":
        return self + (-other)

    def __mul__(self, factor: float) -> "SignedAtomicMeasure":
        return SignedAtomicMeasure(
            self.points, self.weights * float(factor), dim=self.dim, eps=self.eps
        )

    __rmul__ = __mul__

    def as_json(self) -> dict:
        return {
            "atoms": [{"x": p.tolist(), "w": float(w)} for p, w in zip(self.points, self.weights)]
        }


class TransferencePlan(NamedTuple):
    """Coupling between source and target atoms."""

    source: np.ndarray
    target: np.ndarray
    coupling: np.ndarray
    cost: float

    def row_sums(self) -> np.ndarray:
        return self.coupling.sum(axis=1)

    def column_sums(self) -> np.ndarray:
        return self.coupling.sum(axis=0)


def jordan_decompose(
    mu: SignedAtomicMeasure,
) -> Tuple[SignedAtomicMeasure, SignedAtomicMeasure]:
    """(mu+, mu-) with mu = mu+ - mu- and disjoint supports."""
    pos = mu.weights > 0
    return (
        SignedAtomicMeasure(mu.points[pos], mu.weights[pos], dim=mu.dim, eps=mu.eps),
        SignedAtomicMeasure(mu.points[~pos], -mu.weights[~pos], dim=mu.dim, eps=mu.eps),
    )


def tv_norm(mu: SignedAtomicMeasure) -> float:
    return float(np.abs(mu.weights).sum())


def _require_positive(*measures: SignedAtomicMeasure) -> None:
    for m in measures:
        validate(
            m.is_positive,
            "transport needs nonnegative measures, got weight {}",
            float(m.weights.min()) if len(m) else 0.0,
            error=NegativeWeight,
        )


def _marginal_matrices(k: int, l: int) -> Tuple[sparse.csr_matrix, sparse.csr_matrix]:
    """Row-sum and column-sum operators on the flattened k x l coupling."""
    rows = sparse.kron(sparse.eye(k), np.ones((1, l)), format="csr")
    cols = sparse.kron(np.ones((1, k)), sparse.eye(l), format="csr")
    return rows, cols


def _solve_balanced(
    a: np.ndarray, b: np.ndarray, cost: np.ndarray, dense_lp_atoms: int
) -> np.ndarray:
    k, l = cost.shape
    if max(k, l) <= dense_lp_atoms:
        LP_SOLVES.labels(kernel="dense").inc()
        rows, cols = _marginal_matrices(k, l)
        res = linprog(
            cost.ravel(),
            A_eq=sparse.vstack([rows, cols]),
            b_eq=np.concatenate([a, b]),
            bounds=(0, None),
            method="highs",
        )
        validate(res.status == 0, "transport LP failed: {}", res.message)
        return np.maximum(res.x.reshape(k, l), 0.0)

    LP_SOLVES.labels(kernel="network").inc()
    # the network simplex wants exactly equal totals
    b = b * (a.sum() / b.sum())
    return np.asarray(ot.emd(a, b, cost, numItermax=10_000_000))


def wasserstein(
    mu: SignedAtomicMeasure,
    nu: SignedAtomicMeasure,
    dense_lp_atoms: int = DENSE_LP_ATOMS,
) -> Tuple[float, TransferencePlan]:
    """Balanced transport with Euclidean cost between measures of equal mass."""
    _require_positive(mu, nu)
    validate(
        abs(mu.mass - nu.mass) <= MASS_TOL * max(1.0, mu.mass),
        "masses differ: {} vs {}",
        mu.mass,
        nu.mass,
        error=MassMismatch,
    )
    if len(mu) == 0 or len(nu) == 0:
        empty = np.zeros((len(mu), len(nu)))
        return 0.0, TransferencePlan(mu.points, nu.points, empty, 0.0)

    cost = cdist(mu.points, nu.points)
    coupling = _solve_balanced(mu.weights, nu.weights, cost, dense_lp_atoms)
    value = float((coupling * cost).sum())
    LOG.debug("W(%r, %r) = %.12g", mu, nu, value)
    return value, TransferencePlan(mu.points, nu.points, coupling, value)


def partial_transport(
    mu: SignedAtomicMeasure,
    nu: SignedAtomicMeasure,
    dense_lp_atoms: int = DENSE_LP_ATOMS,
) -> Tuple[float, TransferencePlan]:
    """
    Generalized Wasserstein distance and its partial coupling.

    Cost is the transport cost of the coupling plus the untransported mass on
    both sides: sum tau_ij |x_i - y_j| + (mu(X) - sum tau) + (nu(X) - sum tau).
    """
    _require_positive(mu, nu)
    k, l = len(mu), len(nu)
    if k == 0 or l == 0:
        value = mu.mass + nu.mass
        return value, TransferencePlan(mu.points, nu.points, np.zeros((k, l)), value)

    cost = cdist(mu.points, nu.points)
    if max(k, l) <= dense_lp_atoms:
        LP_SOLVES.labels(kernel="dense").inc()
        rows, cols = _marginal_matrices(k, l)
        # the constant mu(X) + nu(X) is added back below
        res = linprog(
            (cost - 2.0).ravel(),
            A_ub=sparse.vstack([rows, cols]),
            b_ub=np.concatenate([mu.weights, nu.weights]),
            bounds=(0, None),
            method="highs",
        )
        validate(res.status == 0, "partial transport LP failed: {}", res.message)
        coupling = np.maximum(res.x.reshape(k, l), 0.0)
    else:
        # dummy source carries nu(X) for creation, dummy target mu(X) for destruction
        augmented = np.zeros((k + 1, l + 1))
        augmented[:k, :l] = cost
        augmented[:k, l] = 1.0
        augmented[k, :l] = 1.0
        a = np.append(mu.weights, nu.mass)
        b = np.append(nu.weights, mu.mass)
        coupling = _solve_balanced(a, b, augmented, dense_lp_atoms=0)[:k, :l]

    moved = float(coupling.sum())
    value = float((coupling * cost).sum()) + mu.mass + nu.mass - 2.0 * moved
    LOG.debug("W-bar(%r, %r) = %.12g", mu, nu, value)
    return value, TransferencePlan(mu.points, nu.points, coupling, value)


def generalized_wasserstein(
    mu: SignedAtomicMeasure,
    nu: SignedAtomicMeasure,
    dense_lp_atoms: int = DENSE_LP_ATOMS,
) -> float:
    return partial_transport(mu, nu, dense_lp_atoms)[0]


def wasserstein_norm(mu: SignedAtomicMeasure, dense_lp_atoms: int = DENSE_LP_ATOMS) -> float:
    """||mu||_W = W-bar(mu+, mu-)"""
    plus, minus = jordan_decompose(mu)
    return generalized_wasserstein(plus, minus, dense_lp_atoms)

