"""Domain types shared across the package.

Every type here is an immutable value. Constructors validate their own
invariants so that downstream code never has to re-check ranges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterable, Mapping


class InvariantViolation(RuntimeError):
    """An internal consistency check failed; indicates upstream corruption."""


class Role(str, Enum):
    OOG = "OOG"
    FVR = "FVR"
    REG = "REG"


class Dimension(str, Enum):
    LP = "LP"
    MC = "MC"
    FQ = "FQ"


SOFT_DIMENSIONS: tuple[Dimension, ...] = (Dimension.LP, Dimension.MC, Dimension.FQ)

SENTINEL_ID = "x0"
SENTINEL_ESTIMATE = -1.0

TERMINAL_REASONS = ("max_steps", "perfect_score", "external_stop")


def _unit(name: str, value: float) -> float:
    value = float(value)
    if not (0.0 <= value <= 1.0) or math.isnan(value):
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
    return value


@dataclass(frozen=True)
class NLTheorem:
    """A natural-language statement/proof pair."""

    id: str
    nl_statement: str
    nl_proof: str
    source_tag: str | None = None
    allow_empty_proof: bool = False

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("theorem id must be nonempty")
        if not self.nl_statement.strip():
            raise ValueError(f"theorem {self.id!r}: nl_statement must be nonempty")
        if not self.nl_proof.strip() and not self.allow_empty_proof:
            raise ValueError(
                f"theorem {self.id!r}: empty nl_proof requires allow_empty_proof"
            )


@dataclass(frozen=True)
class Origin:
    generator: str
    role: Role

    def __str__(self) -> str:
        return f"{self.generator}/{self.role.value}"


@dataclass(frozen=True)
class Formalization:
    """Candidate formal code (statement and proof) with provenance.

    Identity is ``(step_index, origin, ordinal)`` within one theorem's
    trace, never the body: identical bodies may appear more than once.
    """

    body: str
    origin: Origin
    step_index: int
    ordinal: int = 0
    parent_id: str | None = None

    def __post_init__(self) -> None:
        if self.step_index < 0:
            raise ValueError("step_index must be >= 0")
        if self.ordinal < 0:
            raise ValueError("ordinal must be >= 0")
        if self.origin.role is Role.OOG and self.parent_id is not None:
            raise ValueError("OOG candidates have no parent")

    @property
    def id(self) -> str:
        return f"t{self.step_index}.{self.origin.generator}.{self.ordinal}"


@dataclass(frozen=True)
class DimensionScores:
    """The (FV, LP, MC, FQ) score vector.

    ``soft_scored`` is False when judges were not consulted; by convention
    the soft entries are then zero, which the FV mask makes inert.
    """

    fv: int
    lp: float = 0.0
    mc: float = 0.0
    fq: float = 0.0
    soft_scored: bool = True

    def __post_init__(self) -> None:
        if self.fv not in (0, 1) or isinstance(self.fv, bool):
            raise ValueError(f"fv must be 0 or 1, got {self.fv!r}")
        object.__setattr__(self, "lp", _unit("lp", self.lp))
        object.__setattr__(self, "mc", _unit("mc", self.mc))
        object.__setattr__(self, "fq", _unit("fq", self.fq))
        if not self.soft_scored and (self.lp or self.mc or self.fq):
            raise ValueError("unscored candidates must carry zero soft scores")

    @classmethod
    def unscored(cls, fv: int) -> DimensionScores:
        return cls(fv=fv, soft_scored=False)

    def soft(self) -> tuple[float, float, float]:
        return (self.lp, self.mc, self.fq)

    def as_vector(self) -> tuple[float, float, float, float]:
        return (float(self.fv), self.lp, self.mc, self.fq)

    def to_dict(self) -> dict[str, Any]:
        return {
            "fv": self.fv,
            "lp": self.lp,
            "mc": self.mc,
            "fq": self.fq,
            "soft_scored": self.soft_scored,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> DimensionScores:
        return cls(
            fv=int(d["fv"]),
            lp=d["lp"],
            mc=d["mc"],
            fq=d["fq"],
            soft_scored=bool(d["soft_scored"]),
        )


@dataclass(frozen=True)
class MarginConfig:
    """Per-dimension uncertainty levels and lower-confidence margins."""

    delta_lp: float = 0.05
    delta_mc: float = 0.05
    delta_fq: float = 0.05
    margin_lp: float = 0.0
    margin_mc: float = 0.0
    margin_fq: float = 0.0

    def __post_init__(self) -> None:
        for name in ("delta_lp", "delta_mc", "delta_fq"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise ValueError(f"{name} must lie strictly inside (0, 1), got {v!r}")
        for name in ("margin_lp", "margin_mc", "margin_fq"):
            v = getattr(self, name)
            if not (v >= 0.0) or math.isinf(v):
                raise ValueError(f"{name} must be a finite value >= 0, got {v!r}")

    @property
    def deltas(self) -> tuple[float, float, float]:
        return (self.delta_lp, self.delta_mc, self.delta_fq)

    @property
    def margins(self) -> tuple[float, float, float]:
        return (self.margin_lp, self.margin_mc, self.margin_fq)


@dataclass(frozen=True)
class Verdict:
    """A stored judge verdict; the raw transcript is not retained in traces."""

    dimension: Dimension
    aspect_id: str
    judgement: int
    explanation: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "dimension": self.dimension.value,
            "aspect_id": self.aspect_id,
            "judgement": self.judgement,
            "explanation": self.explanation,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Verdict:
        return cls(
            dimension=Dimension(d["dimension"]),
            aspect_id=d["aspect_id"],
            judgement=int(d["judgement"]),
            explanation=d["explanation"],
        )


@dataclass(frozen=True)
class ScoredCandidate:
    """A member of a candidate set after FV checking and (maybe) judging.

    ``feedback`` holds the rendered prover diagnostics for FV=0 members so
    that a later refinement can reuse them without re-running the checker.
    """

    formalization: Formalization
    scores: DimensionScores
    estimate: float
    verdicts: tuple[Verdict, ...] = ()
    feedback: str = ""

    @property
    def id(self) -> str:
        return self.formalization.id


@dataclass(frozen=True)
class IncumbentRef:
    id: str
    estimate: float
    scores: DimensionScores | None = None

    @property
    def is_sentinel(self) -> bool:
        return self.id == SENTINEL_ID


SENTINEL_REF = IncumbentRef(SENTINEL_ID, SENTINEL_ESTIMATE, None)


@dataclass(frozen=True)
class StepRecord:
    """One iteration: the candidate set, its scores and the acceptance outcome.

    ``discarded`` keeps proposals that failed FV and were handed to the
    repairers instead of entering the candidate set.
    """

    step_index: int
    candidates: tuple[ScoredCandidate, ...]
    incumbent_before: IncumbentRef
    incumbent_after: IncumbentRef
    accepted: bool
    discarded: tuple[ScoredCandidate, ...] = ()

    def __post_init__(self) -> None:
        if self.incumbent_after.estimate < self.incumbent_before.estimate:
            raise InvariantViolation(
                f"step {self.step_index}: incumbent estimate decreased "
                f"{self.incumbent_before.estimate} -> {self.incumbent_after.estimate}"
            )
        changed = self.incumbent_after.id != self.incumbent_before.id
        if self.accepted != changed:
            raise InvariantViolation(
                f"step {self.step_index}: accepted={self.accepted} but incumbent "
                f"{'changed' if changed else 'unchanged'}"
            )
        if self.accepted and self.incumbent_after.id not in {c.id for c in self.candidates}:
            raise InvariantViolation(
                f"step {self.step_index}: accepted incumbent is not in the candidate set"
            )

    def candidate(self, cid: str) -> ScoredCandidate | None:
        for c in self.candidates:
            if c.id == cid:
                return c
        return None


@dataclass(frozen=True)
class RunTrace:
    theorem_id: str
    records: tuple[StepRecord, ...]
    terminal_reason: str
    truncated: bool = False

    def __post_init__(self) -> None:
        if self.terminal_reason not in TERMINAL_REASONS:
            raise ValueError(f"unknown terminal_reason {self.terminal_reason!r}")
        check_record_sequence(self.records)

    @property
    def final(self) -> IncumbentRef:
        return self.records[-1].incumbent_after if self.records else SENTINEL_REF

    def incumbent_estimates(self) -> list[float]:
        return [r.incumbent_after.estimate for r in self.records]


def check_record_sequence(records: Iterable[StepRecord]) -> None:
    """Raise InvariantViolation unless steps run 0,1,2,... with chained incumbents."""
    prev: StepRecord | None = None
    for i, rec in enumerate(records):
        if rec.step_index != i:
            raise InvariantViolation(f"expected step {i}, found {rec.step_index}")
        if prev is not None:
            if rec.incumbent_before != prev.incumbent_after:
                raise InvariantViolation(f"step {i}: incumbent chain broken")
        elif rec.incumbent_before != SENTINEL_REF:
            raise InvariantViolation("step 0 must start from the sentinel incumbent")
        prev = rec


@dataclass(frozen=True)
class Incumbent:
    """The live incumbent during a run; ``candidate`` is None for the sentinel."""

    candidate: ScoredCandidate | None = None
    estimate: float = SENTINEL_ESTIMATE

    @property
    def ref(self) -> IncumbentRef:
        if self.candidate is None:
            return SENTINEL_REF
        return IncumbentRef(self.candidate.id, self.estimate, self.candidate.scores)

    @property
    def body(self) -> str:
        return "" if self.candidate is None else self.candidate.formalization.body
