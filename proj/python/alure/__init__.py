"""Python front end of the alure pipeline.

Configs are plain dicts with the same keys as the CLI's JSON config files.
Stage functions return the stage summary printed by the CLI.
"""

import json as _json

from . import _alure
from ._alure import (
    AlureError,
    ConfigError,
    format_percent,
    normalized_entropy,
    relative_metric_change,
    version,
)

__all__ = [
    "AlureError",
    "ConfigError",
    "build_graph",
    "default_config",
    "desk_scale_config",
    "effective_config",
    "embed",
    "evaluate",
    "experiment",
    "experiment_config",
    "format_percent",
    "normalized_entropy",
    "relative_metric_change",
    "retrieve",
    "run_experiment",
    "synth",
    "train",
    "version",
]


def _dump(config):
    return "" if config is None else _json.dumps(config)


def default_config():
    return _json.loads(_alure.default_config())


def desk_scale_config():
    return _json.loads(_alure.desk_scale_config())


def effective_config(config=None):
    """Config after seeds are propagated and validation passed."""
    return _json.loads(_alure.effective_config(_dump(config)))


def _stage(fn):
    def run(config=None):
        return _json.loads(fn(_dump(config)))

    run.__name__ = fn.__name__
    return run


synth = _stage(_alure.synth)
train = _stage(_alure.train)
embed = _stage(_alure.embed)
build_graph = _stage(_alure.build_graph)
retrieve = _stage(_alure.retrieve)
evaluate = _stage(_alure.evaluate)
experiment = _stage(_alure.experiment)


def experiment_config():
    """Desk-scale experiment config for run_experiment."""
    return _json.loads(_alure.experiment_config_desk_scale())


def run_experiment(config, seed):
    """In-memory synth, train, embed, graph, retrieval and metrics for one seed."""
    return _json.loads(_alure.run_experiment(_json.dumps(config), int(seed)))
