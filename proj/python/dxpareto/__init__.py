"""Python access to the dxpareto C++ core."""

import json

from . import _core
from ._core import ConfigError, Error, __version__, am_score, f1_score

__all__ = [
    "ConfigError",
    "Error",
    "__version__",
    "am_score",
    "certify",
    "dp_solve",
    "enumerate_tallies",
    "f1_score",
    "preset",
    "random_instance",
    "reference_instance",
    "run",
    "synthetic",
    "upper_envelope",
]


def preset(name="full"):
    return json.loads(_core.preset(name))


def synthetic(spec=None, seed=0):
    """Returns (X, y, scheme) for a synthetic cohort; the default spec is the cheap-informative task."""
    x, y, scheme = _core.synthetic(json.dumps(spec) if spec else "", seed)
    return x, y, json.loads(scheme)


def upper_envelope(points, metric="f1"):
    return json.loads(_core.upper_envelope(json.dumps(points), metric))


def reference_instance():
    return json.loads(_core.reference_instance())


def random_instance(seed):
    return json.loads(_core.random_instance(seed))


def dp_solve(instance, lam, rho):
    return json.loads(_core.dp_solve(json.dumps(instance), lam, rho))


def enumerate_tallies(instance):
    return json.loads(_core.enumerate_tallies(json.dumps(instance)))


def certify(instance):
    return json.loads(_core.certify(json.dumps(instance)))


def run(command, seed, out, config=None, preset="full", path="", jobs=1):
    """Runs a subcommand (gen-data, pretrain, train, sweep, front, oracle, eval); returns its exit status."""
    return _core.run(command, json.dumps(config or {}), preset, seed, str(out), str(path), jobs)
