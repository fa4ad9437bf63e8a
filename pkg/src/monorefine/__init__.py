"""Monotonic multi-generator refinement of full-theorem autoformalizations."""

from .model import (
    DimensionScores,
    Formalization,
    IncumbentRef,
    InvariantViolation,
    MarginConfig,
    NLTheorem,
    Origin,
    Role,
    RunTrace,
    ScoredCandidate,
    StepRecord,
)
from .objective import (
    aggregate_uncertainty,
    composite_objective,
    lower_confidence_bound,
    plugin_estimator,
    strictly_improves,
)

__version__ = "0.1.0"

__all__ = [
    "DimensionScores", "Formalization", "IncumbentRef", "InvariantViolation", "MarginConfig",
    "NLTheorem", "Origin", "Role", "RunTrace", "ScoredCandidate", "StepRecord",
    "aggregate_uncertainty", "composite_objective", "lower_confidence_bound",
    "plugin_estimator", "strictly_improves",
]
