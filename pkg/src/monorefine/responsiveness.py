"""Per-generator responsiveness estimates and proposal-budget allocation."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .model import DimensionScores, RunTrace, StepRecord

DIMENSION_KEYS = ("fv", "lp", "mc", "fq")


def estimate_responsiveness(
    base: DimensionScores, candidates: Sequence[DimensionScores]
) -> tuple[float, float, float, float]:
    """Mean per-dimension change ``candidate - base`` over ``candidates``.

    FV deltas use the raw prover bits.
    """
    if not candidates:
        raise ValueError("need at least one candidate")
    n = len(candidates)
    b = base.as_vector()
    sums = [0.0, 0.0, 0.0, 0.0]
    for c in candidates:
        for i, v in enumerate(c.as_vector()):
            sums[i] += v - b[i]
    return (sums[0] / n, sums[1] / n, sums[2] / n, sums[3] / n)


@dataclass
class ResponsivenessEntry:
    """Running sums of observed deltas for one generator.

    FV deltas are counted for every parent/child pair; soft deltas only
    when both sides were judged.
    """

    n_fv: int = 0
    sum_fv: float = 0.0
    n_soft: int = 0
    sum_lp: float = 0.0
    sum_mc: float = 0.0
    sum_fq: float = 0.0

    def add(self, base: DimensionScores, child: DimensionScores) -> None:
        self.n_fv += 1
        self.sum_fv += child.fv - base.fv
        if base.soft_scored and child.soft_scored:
            self.n_soft += 1
            self.sum_lp += child.lp - base.lp
            self.sum_mc += child.mc - base.mc
            self.sum_fq += child.fq - base.fq

    def means(self) -> dict[str, float]:
        out: dict[str, float] = {}
        if self.n_fv:
            out["fv"] = self.sum_fv / self.n_fv
        if self.n_soft:
            out["lp"] = self.sum_lp / self.n_soft
            out["mc"] = self.sum_mc / self.n_soft
            out["fq"] = self.sum_fq / self.n_soft
        return out


@dataclass
class ResponsivenessMap:
    entries: dict[str, ResponsivenessEntry] = field(default_factory=dict)

    def observe(self, generator: str, base: DimensionScores, child: DimensionScores) -> None:
        self.entries.setdefault(generator, ResponsivenessEntry()).add(base, child)

    def observe_records(self, records: Iterable[StepRecord]) -> None:
        """Accumulate every parent/child pair found in the records.

        A child's parent is either the step's starting incumbent or a
        proposal of the same step that failed FV and was repaired.
        """
        for rec in records:
            members = rec.candidates + rec.discarded
            by_id = {c.id: c for c in members}
            for child in members:
                pid = child.formalization.parent_id
                if pid is None:
                    continue
                if pid == rec.incumbent_before.id and rec.incumbent_before.scores is not None:
                    base = rec.incumbent_before.scores
                elif pid in by_id:
                    base = by_id[pid].scores
                else:
                    continue
                self.observe(child.formalization.origin.generator, base, child.scores)

    @classmethod
    def from_records(cls, records: Iterable[StepRecord]) -> ResponsivenessMap:
        m = cls()
        m.observe_records(records)
        return m

    @classmethod
    def from_traces(cls, traces: Iterable[RunTrace]) -> ResponsivenessMap:
        m = cls()
        for t in traces:
            m.observe_records(t.records)
        return m

    def rho(self, generator: str) -> dict[str, float]:
        e = self.entries.get(generator)
        return e.means() if e else {}

    def to_dict(self) -> dict[str, dict]:
        return {
            name: {"means": e.means(), "n_fv": e.n_fv, "n_soft": e.n_soft}
            for name, e in sorted(self.entries.items())
        }


def apportion(merits: Sequence[float], total: int, floor: int = 0) -> list[int]:
    """Largest-remainder apportionment of ``total`` with a per-slot ``floor``.

    Remaining seats go proportionally to ``merits``; all-zero merits split
    evenly. Remainder ties resolve to the earlier slot.
    """
    k = len(merits)
    if k == 0:
        raise ValueError("no slots to apportion")
    if total < 0 or floor < 0:
        raise ValueError("total and floor must be nonnegative")
    if floor * k > total:
        raise ValueError(f"infeasible floor: {floor} x {k} exceeds total {total}")
    if any(m < 0 for m in merits):
        raise ValueError("merits must be nonnegative")
    rest = total - floor * k
    exact = [Fraction(m) for m in merits]
    s = sum(exact)
    if s == 0:
        exact = [Fraction(1)] * k
        s = Fraction(k)
    quotas = [rest * m / s for m in exact]
    base = [int(q) for q in quotas]
    left = rest - sum(base)
    order = sorted(range(k), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in order[:left]:
        base[i] += 1
    return [floor + b for b in base]


def merit(rho: Mapping[str, float], dimension_weights: Sequence[float]) -> float:
    if len(dimension_weights) != 4 or any(w < 0 for w in dimension_weights):
        raise ValueError("dimension_weights must be four nonnegative reals (fv, lp, mc, fq)")
    total = sum(w * rho.get(k, 0.0) for k, w in zip(DIMENSION_KEYS, dimension_weights))
    return max(0.0, total)


def allocate_budgets(
    rho: ResponsivenessMap,
    generators: Sequence[str],
    dimension_weights: Sequence[float],
    total_budget: int,
    floor: int = 1,
) -> dict[str, int]:
    """Integer proposal budgets per generator, summing to ``total_budget``."""
    if total_budget < 1:
        raise ValueError("total_budget must be positive")
    merits = [merit(rho.rho(g), dimension_weights) for g in generators]
    return dict(zip(generators, apportion(merits, total_budget, floor)))
