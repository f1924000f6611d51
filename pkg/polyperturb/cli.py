"""
Run one subcommand on file inputs and emit a deterministic report.

Reports have the layout {"schema", "command", "config", "inputs", "result"};
inputs are echoed with their sha256 so a report identifies what it was
computed from. Exit codes: 0 ok, 2 validation error, 3 inconclusive verdict.
"""
import csv
import io
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Optional, TextIO, Tuple

from polyperturb.config import Configuration
from polyperturb.errors import ConfigurationError, InputFormatError
from polyperturb.geometry import Polytope, generic_direction
from polyperturb.isotropy import (
    CompositeMomentFunctional,
    isotropic_constant,
    moments,
    to_isotropic,
)
from polyperturb.metrics import COMMAND_DURATION, COMMAND_RESULTS
from polyperturb.models import Verdict
from polyperturb.parsing import read_measure, read_perturbation, read_polynomial, read_polytope
from polyperturb.perturbation import (
    DensityKind,
    DiscretePerturbation,
    build_family,
    canonical_density,
    compare_slopes,
    family_at,
    hinge_angle,
    pair,
    wasserstein_diagnostic,
    weak_derivative_fd,
)
from polyperturb.polynomial import Polynomial
from polyperturb.quadrature import volume
from polyperturb.stability import stability_report, write_residuals_csv
from polyperturb.transport import SignedAtomicMeasure, tv_norm, wasserstein, wasserstein_norm
from polyperturb.util import file_digest, json_dumps, validate
from polyperturb.util.prometheus import dump_metrics

__all__ = ["RunConfig", "Dispatcher", "dispatch", "SCHEMA", "COMMANDS"]

LOG = logging.getLogger(__name__)

SCHEMA = "polyperturb.report/1"
COMMANDS = (
    "moments",
    "isotropize",
    "lk",
    "perturb build",
    "perturb check",
    "wass",
    "wassnorm",
    "tv",
    "stability",
)
CSV_COMMANDS = ("perturb check", "stability")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_INCONCLUSIVE = 3


@dataclass
class RunConfig:
    """One command line run."""

    command: str
    """ Input files by role (polytope, poly, perturbation, measure, source, target). """
    inputs: Dict[str, Path] = field(default_factory=dict)
    """ Subcommand options (kind, facet, edge, t, tgrid, functional, ...). """
    options: Dict[str, Any] = field(default_factory=dict)
    output: Optional[Path] = None
    output_format: str = "json"
    metrics_file: Optional[Path] = None

    def __post_init__(self) -> None:
        validate(
            self.command in COMMANDS,
            "unknown command {!r}",
            self.command,
            error=ConfigurationError,
        )
        validate(
            self.output_format in ("json", "csv"),
            "format should be json or csv, got {!r}",
            self.output_format,
            error=ConfigurationError,
        )
        validate(
            self.output_format == "json" or self.command in CSV_COMMANDS,
            "csv output is only available for {}",
            ", ".join(CSV_COMMANDS),
            error=ConfigurationError,
        )
        for name in ("refine", "restarts"):
            value = self.options.get(name)
            validate(
                value is None or value > 0,
                "--{} should be positive, got {}",
                name,
                value,
                error=ConfigurationError,
            )


class Dispatcher:
    """Runs the subcommand named by a RunConfig under a Configuration."""

    def __init__(self, conf: Configuration, run: RunConfig) -> None:
        self.conf = conf
        self.run_config = run
        self.handlers: Dict[str, Callable[[], Tuple[Dict[str, Any], int]]] = {
            "moments": self.moments,
            "isotropize": self.isotropize,
            "lk": self.lk,
            "perturb build": self.perturb_build,
            "perturb check": self.perturb_check,
            "wass": self.wass,
            "wassnorm": self.wassnorm,
            "tv": self.tv,
            "stability": self.stability,
        }
        # csv writers, filled by the handlers that support csv
        self.csv: Optional[Callable[[TextIO], None]] = None

    #
    # inputs
    #
    def _input(self, role: str) -> Path:
        path = self.run_config.inputs.get(role)
        validate(path is not None, "missing --{} input", role, error=ConfigurationError)
        return path

    def _read(self, role: str, reader: Callable[[Path], Any]) -> Any:
        path = self._input(role)
        try:
            return reader(path)
        except InputFormatError as err:
            err.file = str(path)
            raise

    def _polytope(self) -> Polytope:
        conf = self.conf
        return self._read(
            "polytope",
            lambda path: read_polytope(path, conf.eps_geo, conf.max_vertices),
        )

    def _measure(self, role: str) -> SignedAtomicMeasure:
        return self._read(role, lambda path: read_measure(path, self.conf.max_atoms))

    def _perturbation(self, polytope: Polytope) -> DiscretePerturbation:
        opts = self.run_config.options
        if "perturbation" in self.run_config.inputs:
            return self._read("perturbation", lambda path: read_perturbation(polytope, path))
        validate(
            opts.get("kind") is not None and opts.get("facet") is not None,
            "give --perturbation FILE or --kind with --facet",
            error=ConfigurationError,
        )
        density = canonical_density(
            polytope, DensityKind(opts["kind"]), opts["facet"], opts.get("edge")
        )
        return DiscretePerturbation(polytope, [density], eps=polytope.eps)

    def _family(self, polytope: Polytope, mu: DiscretePerturbation):
        conf = self.conf
        v = generic_direction(polytope, conf.seed, conf.delta_gen, conf.generic_attempts)
        return build_family(polytope, mu, v, conf.delta_gen, conf.clip_to_shadow)

    #
    # subcommands
    #
    def moments(self) -> Tuple[Dict[str, Any], int]:
        polytope = self._polytope()
        return {"moments": moments(polytope)}, EXIT_OK

    def isotropize(self) -> Tuple[Dict[str, Any], int]:
        polytope = self._polytope()
        iso, amap = to_isotropic(polytope)
        return {
            "polytope": iso,
            "map": amap,
            "L": isotropic_constant(iso),
        }, EXIT_OK

    def lk(self) -> Tuple[Dict[str, Any], int]:
        return {"L": isotropic_constant(self._polytope())}, EXIT_OK

    def perturb_build(self) -> Tuple[Dict[str, Any], int]:
        polytope = self._polytope()
        mu = self._perturbation(polytope)
        family = self._family(polytope, mu)
        result: Dict[str, Any] = {
            "perturbation": mu,
            "direction": family.direction,
            "plus": family.plus,
            "minus": family.minus,
            "t_max": family.t_max,
        }
        t = self.run_config.options.get("t")
        if t is not None:
            body = family_at(family, t)
            result.update({"t": t, "polytope": body, "volume": volume(body)})
            if self.run_config.options.get("kind") == DensityKind.HINGE.value:
                result["hinge_angle"] = hinge_angle(family, self.run_config.options["facet"], t)
        return result, EXIT_OK

    def perturb_check(self) -> Tuple[Dict[str, Any], int]:
        polytope = self._polytope()
        mu = self._perturbation(polytope)
        if "poly" in self.run_config.inputs:
            p = self._read("poly", read_polynomial)
        else:
            p = Polynomial.constant(polytope.dim, 1.0)
        t_grid = self.run_config.options.get("tgrid") or self.conf.t_grid
        family = self._family(polytope, mu)
        samples = weak_derivative_fd(family, p, t_grid, threads=self.conf.threads)
        comparison = compare_slopes(samples, pair(mu, p))
        result: Dict[str, Any] = {"t_max": family.t_max, "comparison": comparison}

        resolution = self.run_config.options.get("resolution")
        if resolution is not None:
            result["diagnostic"] = wasserstein_diagnostic(
                family,
                t_grid,
                resolution,
                max_resolution=self.conf.max_resolution,
                dense_lp_atoms=self.conf.dense_lp_atoms,
            )

        def write_csv(stream: TextIO) -> None:
            writer = csv.writer(stream, lineterminator="\n")
            writer.writerow(["t", "quotient", "error"])
            for sample, error in zip(comparison.samples, comparison.errors):
                writer.writerow([repr(sample.t), repr(sample.quotient), repr(error)])

        self.csv = write_csv
        return result, EXIT_OK

    def wass(self) -> Tuple[Dict[str, Any], int]:
        mu = self._measure("source")
        nu = self._measure("target")
        value, plan = wasserstein(mu, nu, self.conf.dense_lp_atoms)
        return {"W": value, "plan": plan}, EXIT_OK

    def wassnorm(self) -> Tuple[Dict[str, Any], int]:
        mu = self._measure("measure")
        return {"norm": wasserstein_norm(mu, self.conf.dense_lp_atoms)}, EXIT_OK

    def tv(self) -> Tuple[Dict[str, Any], int]:
        return {"tv": tv_norm(self._measure("measure"))}, EXIT_OK

    def stability(self) -> Tuple[Dict[str, Any], int]:
        conf = self.conf
        opts = self.run_config.options
        polytope = self._polytope()
        result: Dict[str, Any] = {}
        if opts.get("isotropize", True):
            polytope, amap = to_isotropic(polytope)
            result["map"] = amap
        phi = CompositeMomentFunctional.from_name(opts.get("functional", "lk"), polytope.dim)
        report = stability_report(
            polytope,
            phi,
            refinement=conf.refinement if opts.get("refine") is None else opts["refine"],
            restarts=conf.restarts if opts.get("restarts") is None else opts["restarts"],
            stability_tol=conf.stability_tol,
            kkt_tol=conf.kkt_tol,
            isotropy_tol=conf.isotropy_tol,
            max_projection_iter=conf.max_projection_iter,
            seed=conf.seed,
            threads=conf.threads,
        )
        result["report"] = report
        self.csv = lambda stream: write_residuals_csv(report, stream)
        code = EXIT_INCONCLUSIVE if report.verdict is Verdict.INCONCLUSIVE else EXIT_OK
        return result, code

    #
    # run
    #
    def report(self) -> Tuple[Dict[str, Any], int]:
        """Run the subcommand; (report, exit code)."""
        run = self.run_config
        result, code = self.handlers[run.command]()
        inputs = {
            role: {"path": str(path), "sha256": file_digest(path)}
            for role, path in sorted(run.inputs.items())
        }
        return {
            "schema": SCHEMA,
            "command": run.command,
            "config": self.conf,
            "options": run.options,
            "inputs": inputs,
            "result": result,
        }, code

    def render(self, report: Dict[str, Any]) -> str:
        if self.run_config.output_format == "csv" and self.csv is not None:
            buf = io.StringIO()
            self.csv(buf)
            return buf.getvalue()
        return json_dumps(report) + "\n"


def _error_document(err: Exception) -> Dict[str, Any]:
    doc: Dict[str, Any] = {"error": type(err).__name__, "reason": str(err)}
    if isinstance(err, InputFormatError):
        doc["path"] = err.path
        if err.file:
            doc["file"] = err.file
    return doc


def dispatch(
    conf: Configuration,
    run: RunConfig,
    stdout: Optional[TextIO] = None,
    stderr: Optional[TextIO] = None,
) -> int:
    """Run, write the report (or csv) and return the exit code."""
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    dispatcher = Dispatcher(conf, run)

    with COMMAND_DURATION.labels(command=run.command).time():
        try:
            report, code = dispatcher.report()
            text = dispatcher.render(report)
        except ValueError as err:
            LOG.debug("%s failed", run.command, exc_info=True)
            stderr.write(json_dumps(_error_document(err), indent=None) + "\n")
            code, text = EXIT_INVALID, None

    if text is not None:
        if run.output is None:
            stdout.write(text)
        else:
            run.output.write_text(text, encoding="utf-8")
            LOG.info("wrote %s report to %s", run.command, run.output)

    COMMAND_RESULTS.labels(command=run.command, exit_code=str(code)).inc()
    if run.metrics_file is not None:
        dump_metrics(run.metrics_file)
    return code
