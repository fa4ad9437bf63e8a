"""Scalar objective math: masked composite, plug-in estimate, LCB, acceptance."""

from __future__ import annotations

import math

from .model import DimensionScores, MarginConfig


class DomainError(ValueError):
    """An input lies outside the domain of an objective function."""


def _check_unit(name: str, v: float) -> None:
    if math.isnan(v) or not (0.0 <= v <= 1.0):
        raise DomainError(f"{name} must lie in [0, 1], got {v!r}")


def composite_objective(fv: int, lp: float, mc: float, fq: float) -> float:
    """Masked composite objective: ``fv * (lp + mc + fq) / 3``.

    The binary ``fv`` acts as a hard mask, so formally invalid code scores
    zero regardless of its soft scores.
    """
    if fv not in (0, 1):
        raise DomainError(f"fv must be 0 or 1, got {fv!r}")
    _check_unit("lp", lp)
    _check_unit("mc", mc)
    _check_unit("fq", fq)
    return fv * (lp + mc + fq) / 3.0


def plugin_estimator(scores: DimensionScores) -> float:
    """Composite objective evaluated on judge estimates."""
    return composite_objective(scores.fv, scores.lp, scores.mc, scores.fq)


def aggregate_uncertainty(delta_lp: float, delta_mc: float, delta_fq: float) -> float:
    """Uncertainty level of the summed bound under independent dimensions."""
    for name, d in (("delta_lp", delta_lp), ("delta_mc", delta_mc), ("delta_fq", delta_fq)):
        if math.isnan(d) or not (0.0 < d < 1.0):
            raise DomainError(f"{name} must lie strictly inside (0, 1), got {d!r}")
    return 1.0 - (1.0 - delta_lp) * (1.0 - delta_mc) * (1.0 - delta_fq)


def lower_confidence_bound(scores: DimensionScores, margins: MarginConfig) -> float:
    """Margin-deflated plug-in estimate.

    Per-dimension terms are deliberately not clamped at zero, so the result
    can be negative when margins exceed the estimates.
    """
    if scores.fv == 0:
        return 0.0
    return (
        (scores.lp - margins.margin_lp)
        + (scores.mc - margins.margin_mc)
        + (scores.fq - margins.margin_fq)
    ) / 3.0


def lcb_confidence(margins: MarginConfig) -> float:
    """Coverage probability ``1 - delta`` guaranteed for the aggregate bound."""
    return 1.0 - aggregate_uncertainty(*margins.deltas)


def strictly_improves(candidate_est: float, incumbent_est: float, epsilon: float = 0.0) -> bool:
    """True iff the candidate beats the incumbent by more than ``epsilon``.

    Ties keep the incumbent.
    """
    if epsilon < 0 or math.isnan(epsilon):
        raise DomainError(f"epsilon must be >= 0, got {epsilon!r}")
    if not (math.isfinite(candidate_est) and math.isfinite(incumbent_est)):
        raise DomainError("estimates must be finite")
    return candidate_est > incumbent_est + epsilon


def is_perfect(estimate: float, tol: float = 1e-12) -> bool:
    return estimate >= 1.0 - tol
