"""
Config file support.

Tolerances and solver limits. Everything has a default so the library can be
used without a config file; the CLI reads an optional YAML file and applies
command line overrides on top.
"""
import logging
from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Optional

from .errors import ConfigurationError
from .util import thread_count, validate

LOG = logging.getLogger(__name__)

__all__ = ["Configuration"]

DEFAULT_T_GRID = [0.2, 0.1, 0.05, 0.025]


@dataclass
class Configuration:
    """Configuration object."""

    """ Geometric tolerance for incidence and feasibility tests. """
    eps_geo: float = 1e-9
    """ Minimal |<u_i, v>| for a generic direction. """
    delta_gen: float = 1e-3
    """ Attempts before generic_direction gives up. """
    generic_attempts: int = 256

    """ Brute-force caps. """
    max_vertices: int = 64
    max_atoms: int = 10_000
    max_resolution: int = 64
    """ Above this many atoms per side, transport uses the network simplex. """
    dense_lp_atoms: int = 200

    """ Isotropy tolerance for the h-function precondition. """
    isotropy_tol: float = 1e-7
    """ Normalised pairing above which a cone direction is a certificate. """
    stability_tol: float = 1e-6
    """ KKT residual at which the cone projection stops. """
    kkt_tol: float = 1e-7
    max_projection_iter: int = 20_000

    """ Facet mesh refinement and lower-face restarts for `stability`. """
    refinement: int = 4
    restarts: int = 8

    """ Default t values for the finite-difference harness. """
    t_grid: List[float] = field(default_factory=lambda: list(DEFAULT_T_GRID))

    """ Add the lifted shadow facets to perturbed families. """
    clip_to_shadow: bool = False

    seed: int = 0
    """ Parallelism cap, defaults to POLYPERTURB_THREADS. """
    threads: int = 1

    def __init__(self, conf: Optional[Dict[str, Any]] = None, **overrides: Any) -> None:
        conf = dict(conf or {})
        # None means "not given on the command line".
        conf.update({k: v for k, v in overrides.items() if v is not None})

        known = {f.name for f in fields(Configuration)}
        unknown = sorted(set(conf) - known)
        validate(
            not unknown,
            "unknown configuration key(s): {}",
            ", ".join(unknown),
            error=ConfigurationError,
        )

        self.eps_geo = float(conf.get("eps_geo", 1e-9))
        validate(
            0 < self.eps_geo < 1e-3,
            "eps_geo needs to be in (0, 1e-3), got {}",
            self.eps_geo,
            error=ConfigurationError,
        )
        self.delta_gen = float(conf.get("delta_gen", 1e-3))
        validate(
            self.eps_geo < self.delta_gen < 1,
            "delta_gen needs to be in (eps_geo, 1), got {}",
            self.delta_gen,
            error=ConfigurationError,
        )
        self.generic_attempts = self._positive_int(conf, "generic_attempts", 256)

        self.max_vertices = self._positive_int(conf, "max_vertices", 64)
        self.max_atoms = self._positive_int(conf, "max_atoms", 10_000)
        self.max_resolution = self._positive_int(conf, "max_resolution", 64)
        self.dense_lp_atoms = self._positive_int(conf, "dense_lp_atoms", 200)

        self.isotropy_tol = self._positive_float(conf, "isotropy_tol", 1e-7)
        self.stability_tol = self._positive_float(conf, "stability_tol", 1e-6)
        self.kkt_tol = self._positive_float(conf, "kkt_tol", 1e-7)
        self.max_projection_iter = self._positive_int(
            conf, "max_projection_iter", 20_000
        )

        self.refinement = self._positive_int(conf, "refinement", 4)
        self.restarts = self._positive_int(conf, "restarts", 8)

        self.t_grid = [float(t) for t in conf.get("t_grid", DEFAULT_T_GRID)]
        validate(
            len(self.t_grid) > 0 and all(t > 0 for t in self.t_grid),
            "t_grid needs to be a non-empty list of positive values",
            error=ConfigurationError,
        )
        validate(
            all(a > b for a, b in zip(self.t_grid, self.t_grid[1:])),
            "t_grid needs to be strictly descending",
            error=ConfigurationError,
        )

        self.clip_to_shadow = bool(conf.get("clip_to_shadow", False))
        self.seed = int(conf.get("seed", 0))
        validate(self.seed >= 0, "seed should be >= 0", error=ConfigurationError)
        self.threads = int(conf.get("threads", thread_count()))
        validate(self.threads > 0, "threads should be > 0", error=ConfigurationError)

    @classmethod
    def defaults(cls) -> "Configuration":
        """Configuration without a file."""
        return cls({})

    @staticmethod
    def _positive_int(conf: Dict[str, Any], key: str, default: int) -> int:
        value = int(conf.get(key, default))
        validate(value > 0, "{} should be > 0", key, error=ConfigurationError)
        return value

    @staticmethod
    def _positive_float(conf: Dict[str, Any], key: str, default: float) -> float:
        value = float(conf.get(key, default))
        validate(value > 0, "{} should be > 0", key, error=ConfigurationError)
        return value
