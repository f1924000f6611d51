"""
Sparse multivariate polynomials and affine maps.

Polynomials are the only integrands: every moment, h-function and test
function is one, so all integrals stay exact.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from polyperturb.errors import DegenerateInput, DimensionMismatch
from polyperturb.util import validate

__all__ = ["Polynomial", "AffineMap", "Exponent", "MAX_DEGREE"]

LOG = logging.getLogger(__name__)

MAX_DEGREE = 8

Exponent = Tuple[int, ...]
Scalar = Union[int, float]


class Polynomial:
    """Polynomial in `dim` variables as a map exponent vector -> coefficient."""

    __slots__ = ("dim", "_terms")

    def __init__(self, dim: int, terms: Optional[Mapping[Sequence[int], float]] = None) -> None:
        validate(dim >= 0, "polynomial dimension should be >= 0, got {}", dim)
        clean: Dict[Exponent, float] = {}
        for raw_exp, coef in (terms or {}).items():
            exp = tuple(int(e) for e in raw_exp)
            validate(
                len(exp) == dim,
                "exponent {} has {} entries, polynomial has {} variables",
                exp,
                len(exp),
                dim,
                error=DimensionMismatch,
            )
            validate(all(e >= 0 for e in exp), "negative exponent in {}", exp)
            clean[exp] = clean.get(exp, 0.0) + float(coef)
        self.dim = dim
        self._terms = {e: c for e, c in clean.items() if c != 0.0}

    #
    # Constructors
    #
    @classmethod
    def zero(cls, dim: int) -> "Polynomial":
        return cls(dim)

    @classmethod
    def constant(cls, dim: int, value: float) -> "Polynomial":
        return cls(dim, {(0,) * dim: value})

    @classmethod
    def monomial(cls, exponents: Sequence[int], coef: float = 1.0) -> "Polynomial":
        return cls(len(exponents), {tuple(exponents): coef})

    @classmethod
    def coordinate(cls, dim: int, index: int) -> "Polynomial":
        """x_index"""
        exp = [0] * dim
        exp[index] = 1
        return cls(dim, {tuple(exp): 1.0})

    @classmethod
    def linear(cls, coefficients: Sequence[float], constant: float = 0.0) -> "Polynomial":
        """<a, x> + b"""
        dim = len(coefficients)
        terms: Dict[Exponent, float] = {(0,) * dim: constant}
        for i, a in enumerate(coefficients):
            exp = [0] * dim
            exp[i] = 1
            terms[tuple(exp)] = a
        return cls(dim, terms)

    @classmethod
    def norm_squared(cls, dim: int) -> "Polynomial":
        """||x||^2"""
        terms = {}
        for i in range(dim):
            exp = [0] * dim
            exp[i] = 2
            terms[tuple(exp)] = 1.0
        return cls(dim, terms)

    #
    # Accessors
    #
    @property
    def terms(self) -> Dict[Exponent, float]:
        return dict(self._terms)

    def items(self) -> Iterator[Tuple[Exponent, float]]:
        return iter(sorted(self._terms.items()))

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self._terms), default=0)

    def is_zero(self) -> bool:
        return not self._terms

    def check_degree(self, cap: int = MAX_DEGREE) -> "Polynomial":
        """Raise unless degree <= cap. Only inputs are capped, not internal products."""
        validate(self.degree <= cap, "degree {} exceeds the cap of {}", self.degree, cap)
        return self

    def __repr__(self) -> str:
        return f"Polynomial(dim={self.dim}, terms={dict(self.items())})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.dim == other.dim and self._terms == other._terms

    def __hash__(self) -> int:
        return hash((self.dim, tuple(self.items())))

    def allclose(self, other: "Polynomial", tol: float = 1e-12) -> bool:
        if self.dim != other.dim:
            return False
        keys = set(self._terms) | set(other._terms)
        return all(
            abs(self._terms.get(k, 0.0) - other._terms.get(k, 0.0)) <= tol for k in keys
        )

    #
    # Arithmetic
    #
    def _coerce(self, other: Union["Polynomial", Scalar]) -> "Polynomial":
        if isinstance(other, Polynomial):
            validate(
                other.dim == self.dim,
                "cannot combine polynomials in {} and {} variables",
                self.dim,
                other.dim,
                error=DimensionMismatch,
            )
            return other
        return Polynomial.constant(self.dim, float(other))

    def __add__(self, other: Union["Polynomial", Scalar]) -> "Polynomial":
        other = self._coerce(other)
        terms = dict(self._terms)
        for e, c in other._terms.items():
            terms[e] = terms.get(e, 0.0) + c
        return Polynomial(self.dim, terms)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial(self.dim, {e: -c for e, c in self._terms.items()})

    def __sub__(self, other: Union["Polynomial", Scalar]) -> "Polynomial":
        return self + (-self._coerce(other))

    def __rsub__(self, other: Scalar) -> "Polynomial":
        return (-self) + other

    def __mul__(self, other: Union["Polynomial", Scalar]) -> "Polynomial":
        if not isinstance(other, Polynomial):
            factor = float(other)
            return Polynomial(self.dim, {e: factor * c for e, c in self._terms.items()})
        other = self._coerce(other)
        terms: Dict[Exponent, float] = {}
        for e1, c1 in self._terms.items():
            for e2, c2 in other._terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                terms[e] = terms.get(e, 0.0) + c1 * c2
        return Polynomial(self.dim, terms)

    __rmul__ = __mul__

    def __truediv__(self, other: Scalar) -> "Polynomial":
        return self * (1.0 / float(other))

    def __pow__(self, k: int) -> "Polynomial":
        validate(k >= 0, "negative power {}", k)
        res = Polynomial.constant(self.dim, 1.0)
        for _ in range(k):
            res = res * self
        return res

    #
    # Evaluation and substitution
    #
    def evaluate(self, points: np.ndarray) -> Union[float, np.ndarray]:
        """Value at one point (shape (dim,)) or at each row of a (k, dim) array."""
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        pts = pts.reshape(-1, self.dim)
        if not self._terms:
            values = np.zeros(len(pts))
        else:
            exps = np.array(list(self._terms.keys()), dtype=float).reshape(-1, self.dim)
            coefs = np.array(list(self._terms.values()))
            values = np.prod(pts[:, None, :] ** exps[None, :, :], axis=2) @ coefs
        return float(values[0]) if single else values

    __call__ = evaluate

    def compose(self, amap: "AffineMap") -> "Polynomial":
        """p(A y + c) as a polynomial in y, by exact expansion."""
        validate(
            amap.output_dim == self.dim,
            "affine map lands in R^{}, polynomial lives in R^{}",
            amap.output_dim,
            self.dim,
            error=DimensionMismatch,
        )
        d = amap.input_dim
        forms = [Polynomial.linear(amap.matrix[i], amap.offset[i]) for i in range(self.dim)]
        powers: List[Dict[int, Polynomial]] = [{0: Polynomial.constant(d, 1.0)} for _ in forms]

        def power(i: int, k: int) -> Polynomial:
            if k not in powers[i]:
                powers[i][k] = power(i, k - 1) * forms[i]
            return powers[i][k]

        result = Polynomial.zero(d)
        for exp, coef in self._terms.items():
            term = Polynomial.constant(d, coef)
            for i, k in enumerate(exp):
                if k:
                    term = term * power(i, k)
            result = result + term
        return result

    def as_json(self) -> Dict[str, object]:
        return {
            "dim": self.dim,
            "terms": [{"exp": list(e), "coef": c} for e, c in self.items()],
        }


@dataclass(frozen=True)
class AffineMap:
    """y -> matrix @ y + offset, from R^d to R^n."""

    matrix: np.ndarray
    offset: np.ndarray

    def __post_init__(self) -> None:
        matrix = np.array(self.matrix, dtype=float, ndmin=2)
        offset = np.array(self.offset, dtype=float).reshape(-1)
        validate(
            matrix.shape[0] == len(offset),
            "matrix with {} rows and offset of length {}",
            matrix.shape[0],
            len(offset),
            error=DimensionMismatch,
        )
        matrix.setflags(write=False)
        offset.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "offset", offset)

    @classmethod
    def identity(cls, n: int) -> "AffineMap":
        return cls(np.eye(n), np.zeros(n))

    @classmethod
    def chart(cls, origin: np.ndarray, basis: np.ndarray) -> "AffineMap":
        """Chart w -> origin + basis @ w of an affine subspace."""
        return cls(basis, origin)

    @property
    def input_dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def output_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def determinant(self) -> float:
        return float(np.linalg.det(self.matrix))

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.matrix.T + self.offset

    def compose(self, inner: "AffineMap") -> "AffineMap":
        """self after inner."""
        return AffineMap(self.matrix @ inner.matrix, self.matrix @ inner.offset + self.offset)

    def inverse(self) -> "AffineMap":
        validate(
            self.input_dim == self.output_dim and abs(self.determinant) > 1e-14,
            "affine map is not invertible",
            error=DegenerateInput,
        )
        inv = np.linalg.inv(self.matrix)
        return AffineMap(inv, -inv @ self.offset)

    def is_identity(self, tol: float = 1e-9) -> bool:
        return (
            self.input_dim == self.output_dim
            and np.allclose(self.matrix, np.eye(self.input_dim), atol=tol)
            and np.allclose(self.offset, 0.0, atol=tol)
        )

    def as_json(self) -> Dict[str, object]:
        return {"matrix": self.matrix.tolist(), "offset": self.offset.tolist()}
