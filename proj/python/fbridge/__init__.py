"""Guided-proposal MCMC for partially observed diffusions.

Config dictionaries take the same keys as the command line tool. Values may
be numbers, strings, sequences (vectors) or nested sequences (matrices).
"""

from ._core import (
    ConfigError,
    DomainError,
    NumericError,
    ObservationScheme,
    kalman_loglik,
    models,
)
from . import _core

__all__ = [
    "ConfigError",
    "DomainError",
    "NumericError",
    "ObservationScheme",
    "infer",
    "kalman_loglik",
    "models",
    "simulate",
    "validate",
]


def _text(value):
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return "true" if value else "false"
    if hasattr(value, "tolist"):
        value = value.tolist()
    if isinstance(value, (list, tuple)):
        if value and isinstance(value[0], (list, tuple)):
            return "; ".join(" ".join(repr(float(x)) for x in row) for row in value)
        return " ".join(repr(float(x)) for x in value)
    return repr(value)


def _config(config):
    return {str(k): _text(v) for k, v in config.items()}


def simulate(config):
    """Simulates a path and observations. Returns a dict with `observations`,
    `truth_times` and `truth`."""
    return _core.simulate(_config(config))


def infer(config, observations):
    """Runs the sampler on an ObservationScheme. Returns the theta trace,
    posterior summary and acceptance counters."""
    return _core.infer(_config(config), observations)


def validate(seed=20240611, configs=200):
    """Runs the kernel self-checks; one dict per check."""
    return _core.validate(seed, configs)
