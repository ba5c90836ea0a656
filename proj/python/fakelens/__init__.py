"""Python access to the fakelens core library."""

import json

from ._core import (
    FormatError,
    NotFoundError,
    allocate_split,
    class_weights,
    confusion,
    difference_curve,
    extract_keyframes,
    frame_difference,
    local_maxima,
    read_tensor,
    report,
    smooth,
    weighted_cross_entropy,
    write_fixture,
)
from . import _core

__all__ = [
    "FormatError",
    "NotFoundError",
    "allocate_split",
    "class_weights",
    "confusion",
    "difference_curve",
    "extract_keyframes",
    "frame_difference",
    "local_maxima",
    "read_tensor",
    "report",
    "run_pipeline",
    "smooth",
    "validate_config",
    "weighted_cross_entropy",
    "write_fixture",
]


def validate_config(doc):
    """Return (normalised config dict or None, list of error strings)."""
    text, errors = _core.validate_config_json(json.dumps(doc))
    return (json.loads(text) if text is not None else None), list(errors)


def run_pipeline(doc, stages=()):
    """Run the given stages (all when empty) for a config dict."""
    return _core.run_pipeline_json(json.dumps(doc), list(stages))
