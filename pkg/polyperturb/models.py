import enum
from typing import Any, List, NamedTuple, Optional, Tuple

import numpy as np


class SlopeSample(NamedTuple):
    """Finite-difference quotient (int_{P_t} p - int_P p) / t."""

    t: float
    quotient: float


class SlopeComparison(NamedTuple):
    """Finite-difference quotients against the first-order prediction."""

    target: float
    samples: List[SlopeSample]
    errors: List[float]
    """ err(t) / err(t/2) for consecutive grid values, None when both vanish. """
    ratios: List[Optional[float]]


class DiagnosticSample(NamedTuple):
    """Wasserstein norm between the scaled difference measure and mu at t."""

    t: float
    distance: float


class Grid(NamedTuple):
    """Uniform grid of `resolution` cells per axis over a box."""

    lower: np.ndarray
    step: np.ndarray
    resolution: int

    @classmethod
    def around(cls, points: np.ndarray, resolution: int) -> "Grid":
        lower = points.min(axis=0)
        upper = points.max(axis=0)
        return cls(lower, (upper - lower) / resolution, resolution)

    def centre(self, index: Tuple[int, ...]) -> np.ndarray:
        return self.lower + (np.asarray(index) + 0.5) * self.step


class FacetResidual(NamedTuple):
    """Pairings of h with the affine functions on one facet."""

    facet: int
    """ (int_F h, int_F h x_1, ..., int_F h x_n) """
    raw: List[float]
    """ (int_F h, int_F h w_1, ..., int_F h w_{n-1}) in the facet chart. """
    projected: List[float]
    norm: float


class FacetProjection(NamedTuple):
    """Projection of h onto the concave cone of one facet."""

    facet: int
    objective: float
    iterations: int
    kkt_residual: float
    """ <h, g*> / ||g*||, 0 when the projection vanishes. """
    pairing: float


class LowerFaceCertificate(NamedTuple):
    """
    Best direction found on a face of dimension < n - 1.

    Vertices carry g = -delta_v (a, b empty); other faces carry
    g = -((a.w + b)_+)^(n - dim) in the face chart.
    """

    dim: int
    vertex_ids: Tuple[int, ...]
    a: List[float]
    b: float
    """ <h, g> / ||g|| """
    pairing: float


class Verdict(enum.Enum):
    WEAKLY_STABLE = "WeaklyStableWithinTol"
    UNSTABLE = "UnstableWithCertificate"
    INCONCLUSIVE = "Inconclusive"


class StabilityReport(NamedTuple):
    """Outcome of the first-order stability analysis of a polytope."""

    functional: str
    refinement: int
    restarts: int
    residuals: List[FacetResidual]
    max_residual: float
    projection_objective: float
    projections: List[FacetProjection]
    lower_faces: List[LowerFaceCertificate]
    """ Best normalised pairing over all certified directions. """
    pairing: float
    certificate: Optional[str]
    """ Best certified cone direction (a ConeElement), None without certificate. """
    direction: Optional[Any]
    verdict: Verdict
