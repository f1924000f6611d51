import logging
from pathlib import Path
from typing import Dict

from prometheus_client import write_to_textfile
from prometheus_client.registry import REGISTRY, CollectorRegistry

__all__ = ["dump_metrics", "sample_values"]


LOG = logging.getLogger(__name__)


def dump_metrics(path: Path, registry: CollectorRegistry = REGISTRY) -> None:
    """Write the registry in the text exposition format."""
    LOG.debug("writing metrics to %s", path)
    write_to_textfile(str(path), registry)


def sample_values(prefix: str, registry: CollectorRegistry = REGISTRY) -> Dict[str, float]:
    """
    Flatten the samples of all metrics whose name starts with prefix.

    Keys are `name{label=value,...}`; handy for logging a run summary and for
    tests.
    """
    res: Dict[str, float] = {}
    for metric in registry.collect():
        for sample in metric.samples:
            if not sample.name.startswith(prefix):
                continue
            labels = ",".join(f"{k}={v}" for k, v in sorted(sample.labels.items()))
            res[f"{sample.name}{{{labels}}}"] = sample.value
    return res
