import enum
import json
from dataclasses import asdict, is_dataclass
from pathlib import Path
from typing import Any, Dict, Optional, TextIO

import numpy as np
from yaml import Loader, load

__all__ = ["load_yaml", "json_dumps", "to_jsonable"]


def load_yaml(config_file: TextIO) -> Dict:
    """load a yaml file."""
    return load(config_file, Loader=Loader)


def to_jsonable(o: Any) -> Any:
    """Convert nested reports (NamedTuples, dataclasses, arrays) to plain types."""
    if hasattr(o, "as_json") and not isinstance(o, type):
        return to_jsonable(o.as_json())
    if isinstance(o, tuple) and hasattr(o, "_asdict"):
        return {k: to_jsonable(v) for k, v in o._asdict().items()}
    if is_dataclass(o) and not isinstance(o, type):
        return to_jsonable(asdict(o))
    if isinstance(o, dict):
        return {str(k): to_jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [to_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return to_jsonable(o.tolist())
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, enum.Enum):
        return o.value
    if isinstance(o, Path):
        return str(o)
    return o


class CustomJSONEncoder(json.JSONEncoder):
    """JSON encoder for reports and configuration objects."""

    def default(self, o: Any) -> Any:
        """Encode object"""
        converted = to_jsonable(o)
        if converted is not o:
            return converted
        # Let the base class default method raise the TypeError if otherwise
        # unknown)
        return json.JSONEncoder.default(self, o)


def json_dumps(obj: Any, indent: Optional[int] = 2) -> str:
    """Dump a report to a deterministic JSON string.

    Floats use Python's shortest round-trip repr (at most 17 significant
    digits), keys are sorted, so identical inputs give identical bytes.
    """
    return json.dumps(
        to_jsonable(obj),
        indent=indent,
        cls=CustomJSONEncoder,
        sort_keys=True,
    )
