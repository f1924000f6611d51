"""First-order perturbation analysis of polytopes."""
import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, NoReturn, Optional

from yaml import YAMLError

from polyperturb.cli import EXIT_INVALID, RunConfig, dispatch
from polyperturb.config import Configuration
from polyperturb.errors import ConfigurationError
from polyperturb.util import json_dumps, load_yaml

LOG = logging.getLogger("polyperturb.__main__")

# argparse dest -> RunConfig.inputs role
INPUT_ROLES = ("polytope", "poly", "perturbation", "measure", "source", "target")


class JsonArgumentParser(argparse.ArgumentParser):
    """Usage errors end up as the JSON error document, like every other failure."""

    def error(self, message: str) -> NoReturn:
        raise ConfigurationError(f"{self.prog}: {message}")


def _add_perturbation_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--polytope", required=True, type=Path)
    parser.add_argument("--kind", choices=["shift", "hinge", "pyramid"])
    parser.add_argument("--facet", type=int)
    parser.add_argument("--edge", type=int, help="ridge of the facet (hinge only)")
    parser.add_argument("--perturbation", type=Path)


def build_parser() -> argparse.ArgumentParser:
    parser = JsonArgumentParser(
        "polyperturb", description="first-order perturbation analysis of polytopes"
    )
    parser.add_argument("-c", "--config", default=None, type=argparse.FileType("r"))
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--eps-geo", type=float)
    parser.add_argument("--stability-tol", type=float)
    parser.add_argument("--output", type=Path, help="write the report here instead of stdout")
    parser.add_argument("--format", choices=["json", "csv"], default="json")
    parser.add_argument("--metrics-file", type=Path)

    commands = parser.add_subparsers(dest="command", required=True)

    for name in ("moments", "isotropize", "lk"):
        sub = commands.add_parser(name)
        sub.add_argument("--polytope", required=True, type=Path)

    perturb = commands.add_parser("perturb").add_subparsers(dest="action", required=True)
    build = perturb.add_parser("build")
    _add_perturbation_args(build)
    build.add_argument("--t", type=float, help="evaluate the family at t")
    check = perturb.add_parser("check")
    _add_perturbation_args(check)
    check.add_argument("--poly", type=Path, help="test polynomial (default: 1)")
    check.add_argument("--tgrid", type=float, nargs="+")
    check.add_argument(
        "--resolution", type=int, help="also report the Wasserstein diagnostic on this grid"
    )

    wass = commands.add_parser("wass")
    wass.add_argument("--source", required=True, type=Path)
    wass.add_argument("--target", required=True, type=Path)
    for name in ("wassnorm", "tv"):
        commands.add_parser(name).add_argument("--measure", required=True, type=Path)

    stability = commands.add_parser("stability")
    stability.add_argument("--polytope", required=True, type=Path)
    stability.add_argument("--functional", choices=["lk", "volume", "inertia"], default="lk")
    stability.add_argument("--refine", type=int)
    stability.add_argument("--restarts", type=int)
    stability.add_argument("--no-isotropize", dest="isotropize", action="store_false")

    return parser


def run_config(args: argparse.Namespace) -> RunConfig:
    command = args.command
    if command == "perturb":
        command = f"perturb {args.action}"

    values: Dict[str, Any] = vars(args)
    inputs = {role: values[role] for role in INPUT_ROLES if values.get(role) is not None}
    ignored = set(INPUT_ROLES) | {
        "command",
        "action",
        "config",
        "verbose",
        "seed",
        "eps_geo",
        "stability_tol",
        "output",
        "format",
        "metrics_file",
    }
    options = {k: v for k, v in sorted(values.items()) if k not in ignored}
    return RunConfig(
        command=command,
        inputs=inputs,
        options=options,
        output=args.output,
        output_format=args.format,
        metrics_file=args.metrics_file,
    )


def setup_logging(verbosity: int) -> None:
    # stdout carries the report
    logging.basicConfig(handlers=[logging.StreamHandler(sys.stderr)])

    if verbosity > 1:
        logging.getLogger().setLevel(logging.DEBUG)
    elif verbosity == 1:
        logging.getLogger().setLevel(logging.INFO)
    else:
        logging.getLogger().setLevel(logging.WARNING)

    # Only log per-iteration solver progress when very verbose.
    logging.getLogger("polyperturb.stability.solver").setLevel(
        logging.DEBUG if verbosity > 2 else logging.WARNING
    )


def _invalid(err: Exception) -> int:
    sys.stderr.write(json_dumps({"error": type(err).__name__, "reason": str(err)}, indent=None) + "\n")
    return EXIT_INVALID


def main(argv: Optional[List[str]] = None) -> int:
    """polyperturb command line."""
    try:
        args = build_parser().parse_args(argv)
    except ConfigurationError as err:
        return _invalid(err)
    setup_logging(args.verbose)

    try:
        config_file = load_yaml(args.config) if args.config else None
        conf = Configuration(
            config_file,
            seed=args.seed,
            eps_geo=args.eps_geo,
            stability_tol=args.stability_tol,
        )
        run = run_config(args)
    except (ValueError, YAMLError) as err:
        return _invalid(err)

    LOG.debug("Configuration: %s", dataclasses.asdict(conf))
    return dispatch(conf, run)


if __name__ == "__main__":
    sys.exit(main())
