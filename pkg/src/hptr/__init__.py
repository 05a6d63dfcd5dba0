"""Propose-test-release for private robust estimation at desk scale.

Modules: ``mechanisms`` (DP primitives and the exact finite-domain verifier),
``robust1d`` (trimmed statistics), ``scores`` (task surrogates over direction
nets), ``resilience`` (certification and corruption), ``engine`` (the
propose-test-release pipeline), ``datagen`` (synthetic families), ``cli``
(experiment harness).
"""

__version__ = "0.1.0"

from . import datagen, engine, mechanisms, resilience, robust1d, scores  # noqa: F401
