"""REBA posture scoring and ergonomic risk evaluation."""

import json

from ._core import (
    DataError,
    ErgoriskError,
    NumericFault,
    default_tables_json,
    inclination_angle,
    joint_angle,
    risk_class,
    run_cli,
    version,
)
from . import _core

__version__ = version()


def score(record, vis_threshold=0.5, tables=None):
    """Score one skeleton (a JSONL line or a dict); returns the result dict."""
    if not isinstance(record, str):
        record = json.dumps(record)
    tables_json = None if tables is None else json.dumps(tables)
    return json.loads(_core.score_json(record, vis_threshold, tables_json))


def evaluate(probs, labels, classes=8):
    """Metrics report for per-sample probability rows and 0-based labels."""
    flat = [float(p) for row in probs for p in row]
    return json.loads(_core.evaluate_json(flat, list(labels), classes))


def default_tables():
    return json.loads(default_tables_json())


__all__ = [
    "DataError",
    "ErgoriskError",
    "NumericFault",
    "default_tables",
    "evaluate",
    "inclination_angle",
    "joint_angle",
    "risk_class",
    "run_cli",
    "score",
]
