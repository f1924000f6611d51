# pylint: disable-rule=unused-import
from .encoding import json_dumps, load_yaml, to_jsonable
from .misc import file_digest, thread_count, validate

__all__ = [
    "load_yaml",
    "json_dumps",
    "to_jsonable",
    "file_digest",
    "thread_count",
    "validate",
]
