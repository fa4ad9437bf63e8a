"""The monotonic refinement process.

Each step builds a candidate set from the configured generators, scores
it, and replaces the incumbent only when the best candidate's plug-in
estimate strictly beats the incumbent's frozen estimate. Stored incumbent
estimates therefore never decrease.
"""

from __future__ import annotations

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .backends import BackendError
from .generators import (
    CandidateProposal,
    GenerationContext,
    GeneratorSpec,
    sample_proposals,
)
from .judges import JudgeUnavailable, SoftJudge, feedback_digest
from .model import (
    DimensionScores,
    Formalization,
    Incumbent,
    InvariantViolation,
    MarginConfig,
    NLTheorem,
    Role,
    RunTrace,
    ScoredCandidate,
    StepRecord,
    check_record_sequence,
)
from .objective import is_perfect, plugin_estimator, strictly_improves
from .prover import ProverGate, ProverUnavailable, fvr_feedback
from .responsiveness import ResponsivenessMap, allocate_budgets
from .tracefile import TraceSink

logger = logging.getLogger(__name__)


class StepAborted(RuntimeError):
    """A step could not complete (outage); the incumbent is kept and the step may be retried."""


@dataclass(frozen=True)
class AdaptiveBudget:
    """Responsiveness-driven per-step budgets for recurrent generators."""

    total: int
    floor: int = 1
    dimension_weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)


@dataclass(frozen=True)
class ProcessConfig:
    oog: tuple[GeneratorSpec, ...]
    fvr: tuple[GeneratorSpec, ...] = ()
    reg: tuple[GeneratorSpec, ...] = ()
    max_steps: int = 6
    epsilon: float = 0.0
    margins: MarginConfig = field(default_factory=MarginConfig)
    adaptive_budget: AdaptiveBudget | None = None
    step_retries: int = 2
    max_workers: int = 1
    seed: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "oog", tuple(self.oog))
        object.__setattr__(self, "fvr", tuple(self.fvr))
        object.__setattr__(self, "reg", tuple(self.reg))
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not self.oog:
            raise ValueError("at least one OOG generator is required")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.step_retries < 0:
            raise ValueError("step_retries must be >= 0")
        for role, specs in ((Role.OOG, self.oog), (Role.FVR, self.fvr), (Role.REG, self.reg)):
            for s in specs:
                if s.role is not role:
                    raise ValueError(f"generator {s.name!r} has role {s.role.value}, expected {role.value}")
        names = [s.name for s in self.generators]
        if len(set(names)) != len(names):
            raise ValueError("generator names must be unique")
        if self.adaptive_budget is not None and self.reg:
            if self.adaptive_budget.floor * len(self.reg) > self.adaptive_budget.total:
                raise ValueError("adaptive budget floor is infeasible for the REG count")

    @property
    def generators(self) -> tuple[GeneratorSpec, ...]:
        return self.oog + self.fvr + self.reg


@dataclass(frozen=True)
class CheckedCandidate:
    formalization: Formalization
    fv: int
    feedback: str = ""
    timed_out: bool = False


@dataclass(frozen=True)
class CandidateSet:
    """Members in scan order, plus proposals that failed FV and were repaired."""

    members: tuple[CheckedCandidate, ...]
    discarded: tuple[CheckedCandidate, ...] = ()


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def incumbent_feedback(incumbent: Incumbent, dims: Sequence[str]) -> str:
    """Feedback for refining the incumbent.

    Judge verdicts stored at acceptance are digested; an incumbent that
    failed FV has no verdicts, so its stored prover feedback is used.
    """
    c = incumbent.candidate
    if c is None:
        raise ValueError("the sentinel incumbent cannot be refined")
    if c.scores.fv == 1 and c.verdicts:
        return feedback_digest(c.verdicts, dims)
    if c.feedback:
        return f"According to the theorem prover, the error details of the provided formal code are:\n\n{c.feedback}"
    raise ValueError(f"incumbent {c.id} carries no feedback")


class MonotonicProcess:
    def __init__(self, config: ProcessConfig, prover: ProverGate, judge: SoftJudge):
        self.config = config
        self.prover = prover
        self.judge = judge

    # candidate construction -------------------------------------------------

    def _budgets(self, step: int, history: Sequence[StepRecord]) -> dict[str, int]:
        budgets = {s.name: s.samples for s in self.config.generators}
        ab = self.config.adaptive_budget
        if ab is not None and self.config.reg and step > 0:
            rho = ResponsivenessMap.from_records(history)
            budgets.update(allocate_budgets(
                rho, [s.name for s in self.config.reg], ab.dimension_weights, ab.total, ab.floor))
        return budgets

    def _check(self, p: Formalization) -> CheckedCandidate:
        try:
            fv, diag = self.prover.check_validity(p.body)
        except ProverUnavailable as exc:
            raise StepAborted(f"prover unavailable: {exc}") from exc
        feedback = ""
        if not fv:
            feedback = fvr_feedback(diag) or "the checker rejected the code without diagnostics"
        return CheckedCandidate(p, fv, feedback, diag.timed_out)

    def construct_candidates(
        self,
        theorem: NLTheorem,
        incumbent: Incumbent,
        step: int,
        history: Sequence[StepRecord] = (),
    ) -> CandidateSet:
        cfg = self.config
        budgets = self._budgets(step, history)
        ordinals: dict[str, int] = {}
        meta = {"seed": cfg.seed} if cfg.seed is not None else None

        def reserve(spec: GeneratorSpec, n: int) -> int:
            first = ordinals.get(spec.name, 0)
            ordinals[spec.name] = first + n
            return first

        tasks: list[tuple[GeneratorSpec, GenerationContext | None, int, int]] = []
        for spec in cfg.oog:
            n = budgets[spec.name]
            tasks.append((spec, None, n, reserve(spec, n)))
        if step > 0 and incumbent.candidate is not None and incumbent.body.strip():
            for spec in cfg.reg:
                n = budgets[spec.name]
                if n == 0:
                    continue
                ctx = GenerationContext(incumbent.candidate.formalization,
                                        incumbent_feedback(incumbent, spec.reg_feedback_dims))
                tasks.append((spec, ctx, n, reserve(spec, n)))

        attempts = 0
        failures = 0

        def run(task) -> list[CandidateProposal]:
            spec, ctx, n, first = task
            return sample_proposals(spec, theorem, ctx, n, step=step, first_ordinal=first,
                                    extra_meta=meta)

        firsts = _map(run, tasks, cfg.max_workers)
        proposals: list[Formalization] = []
        for batch in firsts:
            for p in batch:
                attempts += 1
                failures += p.backend_failed
                if p.extraction_ok:
                    proposals.append(p.formalization)

        checked = _map(self._check, proposals, cfg.max_workers)

        repair_tasks = []
        for c in checked:
            if c.fv == 0:
                ctx = GenerationContext(c.formalization, c.feedback)
                for spec in cfg.fvr:
                    n = budgets[spec.name]
                    if n:
                        repair_tasks.append((spec, ctx, n, reserve(spec, n)))
        repaired_batches = _map(run, repair_tasks, cfg.max_workers)
        repairs: dict[str, list[Formalization]] = {}
        for task, batch in zip(repair_tasks, repaired_batches):
            for p in batch:
                attempts += 1
                failures += p.backend_failed
                if p.extraction_ok:
                    repairs.setdefault(task[1].parent.id, []).append(p.formalization)
        flat = [r for c in checked if c.fv == 0 for r in repairs.get(c.formalization.id, [])]
        rechecked = dict(zip((r.id for r in flat), _map(self._check, flat, cfg.max_workers)))

        if attempts and failures == attempts:
            raise StepAborted(f"all {attempts} generator calls failed at step {step}")

        members: list[CheckedCandidate] = []
        discarded: list[CheckedCandidate] = []
        for c in checked:
            if c.fv == 1:
                members.append(c)
            else:
                discarded.append(c)
                members.extend(rechecked[r.id] for r in repairs.get(c.formalization.id, []))
        return CandidateSet(tuple(members), tuple(discarded))

    # acceptance -------------------------------------------------------------

    def _score(self, theorem: NLTheorem, c: CheckedCandidate) -> ScoredCandidate:
        if c.fv == 0:
            scores = DimensionScores.unscored(0)
            return ScoredCandidate(c.formalization, scores, plugin_estimator(scores), (), c.feedback)
        try:
            a = self.judge.assess(theorem, c.formalization)
        except JudgeUnavailable as exc:
            raise StepAborted(str(exc)) from exc
        scores = DimensionScores(1, a.lp, a.mc, a.fq)
        return ScoredCandidate(c.formalization, scores, plugin_estimator(scores), tuple(a.verdicts))

    def acceptance_step(
        self,
        theorem: NLTheorem,
        incumbent: Incumbent,
        candidates: CandidateSet,
        step: int,
    ) -> tuple[Incumbent, StepRecord]:
        scored = _map(lambda c: self._score(theorem, c), list(candidates.members), self.config.max_workers)
        discarded = tuple(
            ScoredCandidate(c.formalization, DimensionScores.unscored(0), 0.0, (), c.feedback)
            for c in candidates.discarded
        )
        return select_and_accept(incumbent, scored, step, self.config.epsilon, discarded)

    # loop -------------------------------------------------------------------

    def run_theorem(
        self,
        theorem: NLTheorem,
        prior: Sequence[StepRecord] = (),
        on_record: Callable[[StepRecord], None] | None = None,
        stop: threading.Event | None = None,
    ) -> RunTrace:
        """Run (or continue from ``prior``) the process on one theorem."""
        records = list(prior)
        check_record_sequence(records)
        incumbent = incumbent_from_records(records)
        if records and is_perfect(incumbent.estimate):
            return RunTrace(theorem.id, tuple(records), "perfect_score")
        for step in range(len(records), self.config.max_steps):
            if stop is not None and stop.is_set():
                return RunTrace(theorem.id, tuple(records), "external_stop", truncated=True)
            record = None
            for attempt in range(self.config.step_retries + 1):
                try:
                    cands = self.construct_candidates(theorem, incumbent, step, records)
                    incumbent, record = self.acceptance_step(theorem, incumbent, cands, step)
                    break
                except StepAborted as exc:
                    logger.warning("theorem %s step %d aborted (attempt %d/%d): %s", theorem.id,
                                   step, attempt + 1, self.config.step_retries + 1, exc)
            if record is None:
                return RunTrace(theorem.id, tuple(records), "external_stop", truncated=True)
            records.append(record)
            if on_record is not None:
                on_record(record)
            if is_perfect(incumbent.estimate):
                return RunTrace(theorem.id, tuple(records), "perfect_score")
        return RunTrace(theorem.id, tuple(records), "max_steps")


def select_and_accept(
    incumbent: Incumbent,
    scored: Sequence[ScoredCandidate],
    step: int,
    epsilon: float = 0.0,
    discarded: Sequence[ScoredCandidate] = (),
) -> tuple[Incumbent, StepRecord]:
    """Pick the best candidate (later ties win) and accept it only on strict improvement."""
    best: ScoredCandidate | None = None
    j = 0.0
    for c in scored:
        if c.estimate >= j:
            best, j = c, c.estimate
    before = incumbent.ref
    if best is not None and strictly_improves(j, incumbent.estimate, epsilon):
        new = Incumbent(best, best.estimate)
    else:
        new = incumbent
    record = StepRecord(step, tuple(scored), before, new.ref, new is not incumbent, tuple(discarded))
    return new, record


def incumbent_from_records(records: Sequence[StepRecord]) -> Incumbent:
    """Rebuild the live incumbent from stored records (used on resume)."""
    if not records:
        return Incumbent()
    ref = records[-1].incumbent_after
    if ref.is_sentinel:
        return Incumbent()
    for rec in reversed(records):
        c = rec.candidate(ref.id)
        if c is not None and rec.accepted and rec.incumbent_after.id == ref.id:
            return Incumbent(c, ref.estimate)
    raise InvariantViolation(f"incumbent {ref.id} not found among stored candidates")


def replay_acceptance(trace: RunTrace, epsilon: float = 0.0) -> list[str]:
    """Recompute each step's decision from its stored candidates; returns incumbent ids."""
    incumbent = Incumbent()
    ids = []
    for rec in trace.records:
        incumbent, again = select_and_accept(incumbent, rec.candidates, rec.step_index, epsilon, rec.discarded)
        if again != rec:
            raise InvariantViolation(f"{trace.theorem_id} step {rec.step_index}: replay disagrees")
        ids.append(incumbent.ref.id)
    return ids


@dataclass
class DatasetResult:
    traces: list[RunTrace]
    failed: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)


def run_dataset(
    process: MonotonicProcess,
    theorems: Sequence[NLTheorem],
    sink: TraceSink | None = None,
    *,
    parallelism: int = 1,
    prior: dict[str, Sequence[StepRecord]] | None = None,
    finished: Iterable[str] = (),
    stop: threading.Event | None = None,
) -> DatasetResult:
    """Run every theorem, isolating per-theorem failures.

    Records are written to ``sink`` as soon as each step commits. Theorems
    in ``finished`` are skipped; ``prior`` supplies records to resume from.
    Returned traces follow the dataset order.
    """
    if not theorems:
        raise ValueError("dataset is empty")
    prior = prior or {}
    done = set(finished)

    def one(th: NLTheorem) -> RunTrace | None:
        on_record = (lambda r: sink.write_step(th.id, r)) if sink is not None else None
        try:
            trace = process.run_theorem(th, prior.get(th.id, ()), on_record, stop)
        except InvariantViolation:
            raise
        except (BackendError, ValueError, RuntimeError) as exc:
            logger.error("theorem %s failed: %s", th.id, exc)
            return None
        if sink is not None:
            sink.write_end(trace)
        return trace

    todo = [t for t in theorems if t.id not in done]
    results = _map(one, todo, parallelism)
    out = DatasetResult([], [], [t.id for t in theorems if t.id in done])
    for th, tr in zip(todo, results):
        if tr is None:
            out.failed.append(th.id)
        else:
            out.traces.append(tr)
    return out
