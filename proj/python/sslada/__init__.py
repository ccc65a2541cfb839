"""Python access to the sslada workflow.

Configs are plain dicts with the same layout as the JSON config files.
"""

from __future__ import annotations

import json
from typing import Any

from . import _core
from ._core import ArgumentError, DataError, DimensionError, StateError, aggregate, auprc, entropy, score_aada

__all__ = [
    "ArgumentError",
    "DataError",
    "DimensionError",
    "StateError",
    "aggregate",
    "auprc",
    "default_config",
    "entropy",
    "generate_domains",
    "run",
    "score_aada",
]


def _dump(config: dict[str, Any] | None) -> str:
    return "" if config is None else json.dumps(config)


def default_config() -> dict[str, Any]:
    return json.loads(_core.default_config())


def generate_domains(config: dict[str, Any] | None = None) -> dict[str, Any]:
    """Returns {"source": name, "targets": [...], "domains": {name: {"features", "labels", "ids"}}}."""
    source, targets, domains = _core.generate_domains(_dump(config))
    return {"source": source, "targets": list(targets), "domains": dict(domains)}


def run(config: dict[str, Any] | None = None) -> dict[str, Any]:
    """Runs the workflow with oracle labels and returns the grid report."""
    return json.loads(_core.run_workflow(_dump(config)))
