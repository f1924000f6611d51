"""Exceptions raised by polyperturb.

Every error is a ValueError so callers that only care about "bad input" can
catch that, while the CLI maps them to exit codes and machine readable output.
"""
from typing import Optional

__all__ = [
    "PolyPerturbError",
    "ConfigurationError",
    "InputFormatError",
    "DegenerateInput",
    "TooManyVertices",
    "Unbounded",
    "Empty",
    "GenericityFailure",
    "DegenerateSimplex",
    "DimensionMismatch",
    "ChartMismatch",
    "NotIsotropic",
    "IllConditioned",
    "EdgeNotInFacet",
    "NotGeneric",
    "RangeExceeded",
    "DegenerateResult",
    "ResolutionTooHigh",
    "MassMismatch",
    "NegativeWeight",
    "TooManyAtoms",
    "TriangulationMismatch",
    "SolverStalled",
]


class PolyPerturbError(ValueError):
    """Base class for all validation and solver errors."""


class ConfigurationError(PolyPerturbError):
    """Invalid configuration value."""


class InputFormatError(PolyPerturbError):
    """An input file could not be parsed."""

    def __init__(self, message: str, path: str = "$", file: Optional[str] = None) -> None:
        super().__init__(message)
        self.path = path
        self.file = file


#
# geometry
#
class DegenerateInput(PolyPerturbError):
    """Input does not span the ambient space affinely."""


class TooManyVertices(PolyPerturbError):
    """More points or halfspaces than the brute-force cap allows."""


class Unbounded(PolyPerturbError):
    """Halfspace intersection is unbounded."""


class Empty(PolyPerturbError):
    """Halfspace intersection is empty."""


class GenericityFailure(PolyPerturbError):
    """No generic direction was found within the attempt budget."""


#
# quadrature
#
class DegenerateSimplex(PolyPerturbError):
    """Simplex with (numerically) zero volume."""


class DimensionMismatch(PolyPerturbError):
    """Polynomial and domain live in different dimensions."""


class ChartMismatch(PolyPerturbError):
    """A piecewise weight does not cover the face it is integrated over."""


#
# isotropy
#
class NotIsotropic(PolyPerturbError):
    """Body is not in isotropic position."""


class IllConditioned(PolyPerturbError):
    """Covariance matrix too badly conditioned to whiten."""


#
# perturbation
#
class EdgeNotInFacet(PolyPerturbError):
    """Hinge edge is not a ridge of the facet."""


class NotGeneric(PolyPerturbError):
    """Direction is orthogonal (within tolerance) to a facet normal."""


class RangeExceeded(PolyPerturbError):
    """Family parameter outside [0, t_max]."""


class DegenerateResult(PolyPerturbError):
    """Perturbed body lost full dimension."""


class ResolutionTooHigh(PolyPerturbError):
    """Grid resolution above the configured cap."""


#
# transport
#
class MassMismatch(PolyPerturbError):
    """Balanced transport between measures of different mass."""


class NegativeWeight(PolyPerturbError):
    """Negative weight where a positive measure is required."""


class TooManyAtoms(PolyPerturbError):
    """More atoms than the configured cap."""


#
# stability
#
class TriangulationMismatch(PolyPerturbError):
    """Node values do not match the face mesh."""


class SolverStalled(PolyPerturbError):
    """Cone projection did not reach its KKT tolerance."""
