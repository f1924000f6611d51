"""Utilities."""
import hashlib
import logging
import os
from pathlib import Path
from typing import Type

from polyperturb.errors import PolyPerturbError

LOG = logging.getLogger(__name__)

__all__ = ["validate", "file_digest", "thread_count"]

THREADS_ENV = "POLYPERTURB_THREADS"


def validate(
    should_be_true: bool, message: str, *args: object, error: Type[Exception] = PolyPerturbError
) -> None:
    """Validate that an assertion holds."""
    if not should_be_true:
        raise error(message.format(*args))


def file_digest(path: Path) -> str:
    """sha256 of a file, for input digests in reports."""
    digest = hashlib.sha256()
    with Path(path).open("rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def thread_count(default: int = 1) -> int:
    """
    Parallelism cap.

    Read from the POLYPERTURB_THREADS environment variable; invalid values
    fall back to the default.
    """
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return default
    try:
        value = int(raw)
    except ValueError:
        LOG.warning("ignoring %s=%r: not an integer", THREADS_ENV, raw)
        return default
    return max(1, value)
