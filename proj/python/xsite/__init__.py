"""Python front end for the xsite C++ core.

Configs, synth specs and reports cross the boundary as JSON; this module
converts them to and from plain dicts.
"""

import json

from ._xsite import (
    ContractError,
    Error,
    FittedPipeline,
    LoadError,
    SchemaError,
    StateError,
    SubjectRecord,
    accuracy,
    load_bundle,
    load_manifest,
    predict,
    roc_auc,
    write_dataset,
)
from . import _xsite

__all__ = [
    "ContractError",
    "Error",
    "FittedPipeline",
    "LoadError",
    "SchemaError",
    "StateError",
    "SubjectRecord",
    "accuracy",
    "default_config",
    "evaluate",
    "fit",
    "load_bundle",
    "load_manifest",
    "loso",
    "predict",
    "roc_auc",
    "scaffold_report",
    "synth",
    "write_dataset",
]


def _dump(obj):
    return "" if obj is None else json.dumps(obj)


def default_config():
    return json.loads(_xsite.default_config_json())


def synth(spec):
    """Generate subject records from a synth spec dict (same keys as the CLI spec file)."""
    return _xsite.synth_timeseries(json.dumps(spec))


def fit(records, config=None):
    return _xsite.fit(records, _dump(config))


def evaluate(fitted, records, workers=1):
    return json.loads(_xsite.evaluate(fitted, records, workers))


def loso(records, config=None):
    return json.loads(_xsite.loso(records, _dump(config)))


def scaffold_report(fitted):
    return json.loads(fitted.scaffold_report_json())
