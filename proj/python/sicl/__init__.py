"""Style-invariance calibration for test-time adaptation.

Thin wrapper over the compiled ``_sicl`` module. Experiment commands take and
return plain dicts; everything else works on numpy arrays.
"""

import json

from . import _sicl
from ._sicl import (
    AdaptationError,
    ArgumentError,
    ConfigError,
    FormatError,
    Model,
    NumericError,
    SCHEMA_VERSION,
    auroc,
    channel_stats,
    corrupt,
    corruption_names,
    cumulative_ece,
    ece,
    fit_temperature,
    gen_styleshapes,
    gram,
    mixstyle,
    msp_confidence,
    perturb_content,
    perturb_style,
    relaxed_confidence,
    spearman,
    style_variance,
    temperature_confidence,
    whiten,
)

__all__ = [
    "AdaptationError", "ArgumentError", "ConfigError", "FormatError", "Model", "NumericError", "SCHEMA_VERSION",
    "analyze", "auroc", "channel_stats", "corrupt", "corruption_names", "cumulative_ece", "default_config", "ece",
    "fit_temperature", "gen_data", "gen_styleshapes", "gram", "mixstyle", "msp_confidence", "perturb_content",
    "perturb_style", "relaxed_confidence", "report", "run", "spearman", "style_variance", "temperature_confidence",
    "whiten",
]


def default_config():
    return json.loads(_sicl.default_config())


def _merged(config):
    cfg = default_config()
    cfg.update(config or {})
    return json.dumps(cfg)


def gen_data(config, seed=0):
    counts, checksums = _sicl.gen_data(_merged(config), seed)
    return {"counts": counts, "checksums": checksums}


def run(config, seed=0):
    """Runs every configured scenario for one seed; returns the summary.json content."""
    return json.loads(_sicl.run(_merged(config), seed))


def analyze(config, seed=0):
    return _sicl.analyze(_merged(config), seed)


def report(dirs, out=""):
    return _sicl.report([str(d) for d in dirs], str(out))
