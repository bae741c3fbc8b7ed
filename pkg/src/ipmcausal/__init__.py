"""Causal and explainable decision support for integrated pest management.

An ecosystem simulator with known causal structure serves as ground truth for
four analysis layers: invariant prediction across agroclimatic zones, an
interpretable presence classifier, counterfactual in-season advice, and
treatment-effect estimation with difference-in-differences evaluation.
"""

from . import counterfactual, datamodel, ebm, effects, invariant, pipeline, scm

__version__ = "0.1.0"

__all__ = [
    "counterfactual",
    "datamodel",
    "ebm",
    "effects",
    "invariant",
    "pipeline",
    "scm",
]
