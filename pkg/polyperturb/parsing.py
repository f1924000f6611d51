"""
Readers for the input files.

- polytope JSON: {"dim": n, "vertices": [[...], ...]} or {"dim": n, "halfspaces": [{"u": [...], "b": x}, ...]}
  ("dim" optional, "a" accepted for "u")
- OFF (3-dimensional only): vertex block of a Geomview OFF file, faces ignored
- polynomial JSON: {"dim": n, "terms": [{"exp": [...], "coef": c}, ...]}
- perturbation JSON: list of {"facet": i, "pieces": [{"a": [...], "b": x}, ...]}
  or {"facet": i, "kind": "shift" | "hinge" | "pyramid", "edge": j}
- measure JSON: {"atoms": [{"x": [...], "w": w}, ...]}

Every reader raises InputFormatError carrying the JSON path of the offending
value.
"""
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Sequence, Union

from polyperturb.errors import InputFormatError
from polyperturb.geometry import EPS_GEO, MAX_VERTICES, Polytope, from_halfspaces, from_vertices
from polyperturb.perturbation import (
    DensityKind,
    DiscretePerturbation,
    PiecewiseAffineDensity,
    canonical_density,
)
from polyperturb.polynomial import Polynomial
from polyperturb.transport import MAX_ATOMS, SignedAtomicMeasure

__all__ = [
    "read_json",
    "read_polytope",
    "read_off",
    "read_polynomial",
    "read_perturbation",
    "read_measure",
    "parse_polytope",
    "parse_polynomial",
    "parse_perturbation",
    "parse_measure",
]

LOG = logging.getLogger(__name__)

MIN_DIM = 2
MAX_DIM = 4

PathLike = Union[str, Path]


def _fail(path: str, reason: str, *args: object) -> InputFormatError:
    return InputFormatError(f"{path}: {reason.format(*args)}", path=path)


def _require(condition: bool, path: str, reason: str, *args: object) -> None:
    if not condition:
        raise _fail(path, reason, *args)


def read_json(file: PathLike) -> Any:
    try:
        text = Path(file).read_text(encoding="utf-8")
    except OSError as err:
        raise _fail("$", "cannot read {}: {}", file, err.strerror) from err
    try:
        return json.loads(text)
    except json.JSONDecodeError as err:
        raise _fail("$", "malformed JSON at line {} column {}: {}", err.lineno, err.colno, err.msg) from err


def _number(value: Any, path: str) -> float:
    _require(
        isinstance(value, (int, float)) and not isinstance(value, bool),
        path,
        "expected a number, got {!r}",
        value,
    )
    _require(math.isfinite(value), path, "expected a finite number, got {!r}", value)
    return float(value)


def _vector(value: Any, path: str, length: int = -1) -> List[float]:
    _require(isinstance(value, list), path, "expected a list of numbers")
    if length >= 0:
        _require(len(value) == length, path, "expected {} entries, got {}", length, len(value))
    return [_number(x, f"{path}[{i}]") for i, x in enumerate(value)]


def _rows(value: Any, path: str) -> List[List[float]]:
    _require(isinstance(value, list) and len(value) > 0, path, "expected a non-empty list")
    first = _vector(value[0], f"{path}[0]")
    return [first] + [_vector(v, f"{path}[{i}]", len(first)) for i, v in enumerate(value[1:], 1)]


def _check_dim(n: int, path: str) -> None:
    _require(MIN_DIM <= n <= MAX_DIM, path, "dimension {} not in [{}, {}]", n, MIN_DIM, MAX_DIM)


def _build(builder, path: str, *args: Any, **kwargs: Any) -> Any:
    """Wrap geometric validation errors with the path of the input."""
    try:
        return builder(*args, **kwargs)
    except InputFormatError:
        raise
    except ValueError as err:
        raise _fail(path, "{} ({})", err, type(err).__name__) from err


def _declared_dim(doc: Dict[str, Any], dim: int, path: str) -> None:
    if "dim" in doc:
        _require(
            isinstance(doc["dim"], int) and not isinstance(doc["dim"], bool),
            "$.dim",
            "expected an integer dimension",
        )
        _require(doc["dim"] == dim, "$.dim", "{} holds points of R^{}, not R^{}", path, dim, doc["dim"])


def parse_polytope(doc: Any, eps: float = EPS_GEO, max_vertices: int = MAX_VERTICES) -> Polytope:
    _require(isinstance(doc, dict), "$", "expected an object")
    if "vertices" in doc:
        vertices = _rows(doc["vertices"], "$.vertices")
        _check_dim(len(vertices[0]), "$.vertices[0]")
        _declared_dim(doc, len(vertices[0]), "$.vertices")
        return _build(from_vertices, "$.vertices", vertices, eps=eps, max_vertices=max_vertices)
    _require("halfspaces" in doc, "$", "expected 'vertices' or 'halfspaces'")
    raw = doc["halfspaces"]
    _require(isinstance(raw, list) and len(raw) > 0, "$.halfspaces", "expected a non-empty list")
    halfspaces = []
    dim = -1
    for i, item in enumerate(raw):
        path = f"$.halfspaces[{i}]"
        _require(isinstance(item, dict), path, "expected an object with 'u' and 'b'")
        # "a" is accepted for the normal as well, like the density pieces
        key = "u" if "u" in item else "a"
        _require(key in item and "b" in item, path, "expected keys 'u' and 'b'")
        u = _vector(item[key], f"{path}.{key}", dim)
        dim = len(u)
        halfspaces.append((u, _number(item["b"], f"{path}.b")))
    _check_dim(dim, "$.halfspaces[0]")
    _declared_dim(doc, dim, "$.halfspaces")
    return _build(
        from_halfspaces, "$.halfspaces", halfspaces, eps=eps, max_halfspaces=max_vertices
    )


def read_polytope(file: PathLike, eps: float = EPS_GEO, max_vertices: int = MAX_VERTICES) -> Polytope:
    """Polytope from a JSON file, or an OFF file when the suffix is .off."""
    if Path(file).suffix.lower() == ".off":
        return read_off(file, eps, max_vertices)
    polytope = parse_polytope(read_json(file), eps, max_vertices)
    LOG.debug("read %r from %s", polytope, file)
    return polytope


def read_off(file: PathLike, eps: float = EPS_GEO, max_vertices: int = MAX_VERTICES) -> Polytope:
    try:
        text = Path(file).read_text(encoding="utf-8")
    except OSError as err:
        raise _fail("$", "cannot read {}: {}", file, err.strerror) from err
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    _require(len(lines) > 0 and lines[0].startswith("OFF"), "line 1", "missing OFF header")
    header = lines[0][3:].split() or (lines[1].split() if len(lines) > 1 else [])
    body = lines[1:] if lines[0][3:].split() else lines[2:]
    _require(len(header) >= 1, "line 2", "missing vertex count")
    try:
        count = int(header[0])
    except ValueError as err:
        raise _fail("line 2", "vertex count {!r} is not an integer", header[0]) from err
    _require(len(body) >= count, "$", "expected {} vertex lines, got {}", count, len(body))
    vertices = []
    for i, line in enumerate(body[:count]):
        try:
            coords = [float(x) for x in line.split()]
        except ValueError as err:
            raise _fail(f"vertex {i}", "non-numeric coordinate in {!r}", line) from err
        _require(len(coords) == 3, f"vertex {i}", "OFF vertices need 3 coordinates, got {}", len(coords))
        vertices.append(coords)
    return _build(from_vertices, "$", vertices, eps=eps, max_vertices=max_vertices)


def parse_polynomial(doc: Any) -> Polynomial:
    _require(isinstance(doc, dict), "$", "expected an object")
    _require(isinstance(doc.get("dim"), int), "$.dim", "expected an integer dimension")
    dim = doc["dim"]
    raw = doc.get("terms", [])
    _require(isinstance(raw, list), "$.terms", "expected a list")
    terms = {}
    for i, item in enumerate(raw):
        path = f"$.terms[{i}]"
        _require(isinstance(item, dict) and "exp" in item, path, "expected an object with 'exp'")
        exp = item["exp"]
        _require(
            isinstance(exp, list) and all(isinstance(e, int) and e >= 0 for e in exp),
            f"{path}.exp",
            "expected a list of nonnegative integers",
        )
        _require(len(exp) == dim, f"{path}.exp", "expected {} exponents, got {}", dim, len(exp))
        key = tuple(exp)
        terms[key] = terms.get(key, 0.0) + _number(item.get("coef", 1.0), f"{path}.coef")
    p = _build(Polynomial, "$", dim, terms)
    return _build(p.check_degree, "$.terms")


def read_polynomial(file: PathLike) -> Polynomial:
    return parse_polynomial(read_json(file))


def _parse_density(polytope: Polytope, item: Any, path: str) -> PiecewiseAffineDensity:
    _require(isinstance(item, dict), path, "expected an object")
    _require(
        isinstance(item.get("facet"), int) and not isinstance(item.get("facet"), bool),
        f"{path}.facet",
        "expected a facet index",
    )
    facet = item["facet"]
    if "kind" in item:
        kinds = [k.value for k in DensityKind]
        _require(item["kind"] in kinds, f"{path}.kind", "expected one of {}", ", ".join(kinds))
        edge = item.get("edge")
        _require(edge is None or isinstance(edge, int), f"{path}.edge", "expected a ridge index")
        return _build(canonical_density, path, polytope, DensityKind(item["kind"]), facet, edge)

    raw = item.get("pieces")
    _require(isinstance(raw, list) and len(raw) > 0, f"{path}.pieces", "expected a non-empty list")
    pieces = []
    for j, piece in enumerate(raw):
        p = f"{path}.pieces[{j}]"
        _require(isinstance(piece, dict) and "a" in piece and "b" in piece, p, "expected keys 'a' and 'b'")
        a = _vector(piece["a"], f"{p}.a", polytope.dim - 1)
        pieces.append(a + [_number(piece["b"], f"{p}.b")])
    return PiecewiseAffineDensity(facet, pieces)


def parse_perturbation(polytope: Polytope, doc: Any) -> DiscretePerturbation:
    if isinstance(doc, dict):
        doc = [doc]
    _require(isinstance(doc, list), "$", "expected a list of facet densities")
    densities = [_parse_density(polytope, item, f"$[{i}]") for i, item in enumerate(doc)]
    return _build(DiscretePerturbation, "$", polytope, densities, eps=polytope.eps)


def read_perturbation(polytope: Polytope, file: PathLike) -> DiscretePerturbation:
    return parse_perturbation(polytope, read_json(file))


def parse_measure(doc: Any, dim: int = -1, max_atoms: int = MAX_ATOMS) -> SignedAtomicMeasure:
    _require(isinstance(doc, dict), "$", "expected an object")
    raw = doc.get("atoms")
    _require(isinstance(raw, list), "$.atoms", "expected a list of atoms")
    points: List[Sequence[float]] = []
    weights: List[float] = []
    for i, atom in enumerate(raw):
        path = f"$.atoms[{i}]"
        _require(isinstance(atom, dict) and "x" in atom and "w" in atom, path, "expected keys 'x' and 'w'")
        x = _vector(atom["x"], f"{path}.x", dim)
        dim = len(x)
        points.append(x)
        weights.append(_number(atom["w"], f"{path}.w"))
    if "dim" in doc:
        _require(isinstance(doc["dim"], int), "$.dim", "expected an integer dimension")
        _require(dim < 0 or dim == doc["dim"], "$.dim", "atoms live in R^{}, not R^{}", dim, doc["dim"])
        dim = doc["dim"]
    _require(dim >= 1, "$", "empty measure needs a 'dim'")
    return _build(SignedAtomicMeasure, "$.atoms", points, weights, dim=dim, max_atoms=max_atoms)


def read_measure(file: PathLike, max_atoms: int = MAX_ATOMS) -> SignedAtomicMeasure:
    return parse_measure(read_json(file), max_atoms=max_atoms)
