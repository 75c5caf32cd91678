"""Class-incremental hand-gesture learning."""

import json as _json

from ._hagil import *  # noqa: F401,F403
from ._hagil import (
    Learner,
    aggregate as _aggregate,
    run_all as _run_all,
    run_scenario as _run_scenario,
)

__all__ = [name for name in dir() if not name.startswith("_")]


def _as_json(scenario):
    return scenario if isinstance(scenario, str) else _json.dumps(scenario)


def run_scenario(scenario, run_index=0):
    """Run one repetition. `scenario` is a dict or a JSON string."""
    return _run_scenario(_as_json(scenario), run_index)


def run_all(scenario, parallel=1):
    return _run_all(_as_json(scenario), parallel)


def aggregate(runs):
    return _json.loads(_aggregate(list(runs)))


def learner(**overrides):
    """Learner from the default configuration with top-level keys replaced."""
    cfg = _json.loads(Learner.default_config_json())
    unknown = set(overrides) - set(cfg)
    if unknown:
        raise KeyError(f"unknown learner options: {sorted(unknown)}")
    cfg.update(overrides)
    return Learner(_json.dumps(cfg))
