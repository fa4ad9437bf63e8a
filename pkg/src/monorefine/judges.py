"""LLM judge ensemble for the soft dimensions (LP, MC, FQ).

Each dimension is split into binary aspects ("operable atomic properties").
A judge backend answers one aspect at a time; the answers are fused into a
per-dimension estimate with positive weights summing to one.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping, Protocol, Sequence

from .backends import BackendError, ChatBackend, ChatRequest
from .model import SOFT_DIMENSIONS, Dimension, Formalization, NLTheorem, Verdict

logger = logging.getLogger(__name__)

DELIMITER = "%" * 10
_DELIM_LINE = re.compile(r"^[ \t]*%{10,}[ \t]*$", re.MULTILINE)
_JUDGEMENT_LINE = re.compile(r"^[ \t]*Judge?ment[ \t]*:[ \t]*(.*?)[ \t]*$", re.MULTILINE | re.IGNORECASE)
_EXPLANATION = re.compile(r"Explanation[ \t]*:[ \t]*", re.IGNORECASE)


@dataclass(frozen=True)
class JudgeAspect:
    dimension: Dimension
    aspect_id: str
    description: str


ASPECTS: tuple[JudgeAspect, ...] = (
    JudgeAspect(Dimension.LP, "Pre-arg Structure",
                "Does the formalized code reflect the inherent predicate-argument "
                "structure of the natural language statement?"),
    JudgeAspect(Dimension.LP, "Quantification",
                "Does the formalized code accurately formalize all quantifiers, such as "
                "universal and existential, present in the natural language statement?"),
    JudgeAspect(Dimension.LP, "Formula",
                "Are all mathematical formulas and expressions in the natural language "
                "statement, such as equations and inequalities, correctly and completely "
                "represented in the formalized code?"),
    JudgeAspect(Dimension.LP, "Relation",
                "Are the logical and mathematical relationships between propositions in "
                "the natural language statement preserved in the formalized code?"),
    JudgeAspect(Dimension.MC, "Concept",
                "Are all mathematical concepts mentioned in the natural language statement, "
                "such as integers, fractions, real numbers, complex numbers, derivatives, "
                "integrals, vectors, matrices, probabilities, expectations, and variances, "
                "are correctly formalized in the formalized code?"),
    JudgeAspect(Dimension.MC, "Constant",
                "Are all mathematical constants mentioned in the natural language statement, "
                "such as 1, $\\frac{2}{3}$, $\\pi$, $e$, are properly included in the "
                "formalized code?"),
    JudgeAspect(Dimension.MC, "Operator",
                "Are all mathematical operators used in the natural language statement, such "
                "as addition, subtraction, multiplication, division, summation, "
                "exponentiation, and product, are correctly represented in the formalized code?"),
    JudgeAspect(Dimension.FQ, "Conciseness",
                "Is the formalized code expressed in a minimal, non-redundant form, avoiding "
                "unnecessary repetition or complexity?"),
    JudgeAspect(Dimension.FQ, "Logical Consistency",
                "Is the formalized code internally coherent and contains no contradictions "
                "under the logical rules of the relevant formal system?"),
)


def aspects_for(dim: Dimension, registry: Sequence[JudgeAspect] = ASPECTS) -> list[JudgeAspect]:
    return [a for a in registry if a.dimension is dim]


JUDGE_SYSTEM_TEMPLATE = """\
You are an expert in formal language {language}.

You will be given a mathematical statement and its proof written in natural language and LaTeX symbols.

You will also be given a formal code which attempted to describe the given mathematical statement and its proof in {language}.

Your task is to evaluate a specific aspect of the formal code.

The description of the aspect is: {description}

Your need to give two things about your evaluation:

1. the judgement of whether the formalization meets this aspect. This should be a binary value in "True" or "False".

2. the detailed explanation of your judgement.

You should wrap your final results in a way illustrated as the following:

%%%%%%%%%%

Explanation: Your Detailed Explanation

Judgement: Your Binary Judgement

%%%%%%%%%%

Strictly follow the instructions that have been claimed."""

JUDGE_USER_TEMPLATE = """\
Natural language statement: {statement}

Natural language proof: {proof}

There are some {language} formal codes describing the given mathematical statement and its proof: {code}"""


def build_aspect_prompt(
    theorem: NLTheorem, x: Formalization, aspect: JudgeAspect, language: str = "Lean4"
) -> tuple[str, str]:
    system = JUDGE_SYSTEM_TEMPLATE.format(language=language, description=aspect.description)
    user = JUDGE_USER_TEMPLATE.format(
        statement=theorem.nl_statement,
        proof=theorem.nl_proof,
        language=language,
        code=x.body,
    )
    return system, user


class VerdictParseError(ValueError):
    """Base class for judge responses that cannot be turned into a verdict."""


class MissingDelimiters(VerdictParseError):
    pass


class MissingJudgementLine(VerdictParseError):
    pass


class UnrecognizedToken(VerdictParseError):
    pass


@dataclass(frozen=True)
class JudgeVerdict:
    aspect: JudgeAspect
    judgement: int
    explanation: str
    raw: str

    def stored(self) -> Verdict:
        return Verdict(self.aspect.dimension, self.aspect.aspect_id, self.judgement, self.explanation)


def last_delimited_region(raw: str) -> str | None:
    """Text of the last region bounded by ``%%%%%%%%%%`` lines.

    A single delimiter line yields the text after it (models sometimes drop
    the closing fence). Returns None when there is no delimiter line.
    """
    marks = list(_DELIM_LINE.finditer(raw))
    if not marks:
        return None
    if len(marks) == 1:
        return raw[marks[0].end():]
    return raw[marks[-2].end():marks[-1].start()]


def parse_verdict(raw: str, aspect: JudgeAspect) -> JudgeVerdict:
    if not raw or not raw.strip():
        raise MissingDelimiters("empty judge response")
    region = last_delimited_region(raw)
    if region is None:
        raise MissingDelimiters("no %%%%%%%%%% block in judge response")
    lines = list(_JUDGEMENT_LINE.finditer(region))
    if not lines:
        raise MissingJudgementLine("no 'Judgement:' line in the delimited block")
    last = lines[-1]
    token = last.group(1).strip().strip("\"'*`.").strip().lower()
    if token == "true":
        judgement = 1
    elif token == "false":
        judgement = 0
    else:
        raise UnrecognizedToken(f"unrecognized judgement token {last.group(1)!r}")
    head = region[:last.start()]
    m = _EXPLANATION.search(head)
    explanation = (head[m.end():] if m else head).strip()
    return JudgeVerdict(aspect, judgement, explanation, raw)


def format_verdict(explanation: str, judgement: bool) -> str:
    """Render a verdict in the wrapped layout the judge prompt asks for."""
    return f"{DELIMITER}\n\nExplanation: {explanation}\n\nJudgement: {judgement}\n\n{DELIMITER}"


@dataclass(frozen=True)
class FusionWeights:
    """Per-dimension aspect weights; each vector is positive and sums to one."""

    lp: tuple[float, ...]
    mc: tuple[float, ...]
    fq: tuple[float, ...]

    def __post_init__(self) -> None:
        for dim in SOFT_DIMENSIONS:
            w = self.for_dimension(dim)
            if not w or any(v <= 0 for v in w):
                raise ValueError(f"{dim.value} weights must be nonempty and positive")
            if abs(sum(w) - 1.0) > 1e-12:
                raise ValueError(f"{dim.value} weights must sum to 1, got {sum(w)!r}")

    def for_dimension(self, dim: Dimension) -> tuple[float, ...]:
        return {Dimension.LP: self.lp, Dimension.MC: self.mc, Dimension.FQ: self.fq}[dim]

    @classmethod
    def equal(cls, registry: Sequence[JudgeAspect] = ASPECTS) -> FusionWeights:
        def eq(dim: Dimension) -> tuple[float, ...]:
            k = len(aspects_for(dim, registry))
            return tuple([1.0 / k] * k)

        return cls(eq(Dimension.LP), eq(Dimension.MC), eq(Dimension.FQ))

    @classmethod
    def from_mapping(cls, m: Mapping[str, Sequence[float]]) -> FusionWeights:
        return cls(tuple(m["LP"]), tuple(m["MC"]), tuple(m["FQ"]))


def fuse_dimension(verdicts: Sequence[float], weights: Sequence[float]) -> float:
    """Weighted fusion of per-aspect scores in [0, 1]."""
    if len(verdicts) != len(weights):
        raise ValueError(f"{len(verdicts)} verdicts but {len(weights)} weights")
    total = sum(w * v for w, v in zip(weights, verdicts))
    return min(1.0, max(0.0, total))


class JudgeUnavailable(RuntimeError):
    """The judge backend failed after retries; the candidate cannot be scored."""


@dataclass(frozen=True)
class SoftAssessment:
    lp: float
    mc: float
    fq: float
    verdicts: tuple[Verdict, ...]


class SoftJudge(Protocol):
    def assess(self, theorem: NLTheorem, x: Formalization) -> SoftAssessment: ...


class JudgeEnsemble:
    """Scores soft dimensions by querying every aspect ``votes_per_aspect`` times.

    A vote whose response cannot be parsed is re-requested up to
    ``parse_retries`` times and then counted as 0. A transport failure
    raises :class:`JudgeUnavailable`.
    """

    def __init__(
        self,
        backend: ChatBackend,
        weights: FusionWeights | None = None,
        votes_per_aspect: int = 1,
        *,
        temperature: float = 0.0,
        max_tokens: int | None = None,
        parse_retries: int = 2,
        max_workers: int = 1,
        language: str = "Lean4",
        registry: Sequence[JudgeAspect] = ASPECTS,
    ):
        if votes_per_aspect < 1:
            raise ValueError("votes_per_aspect must be positive")
        self.backend = backend
        self.registry = tuple(registry)
        self.weights = weights or FusionWeights.equal(self.registry)
        for dim in SOFT_DIMENSIONS:
            if len(self.weights.for_dimension(dim)) != len(aspects_for(dim, self.registry)):
                raise ValueError(f"weight count for {dim.value} does not match aspect count")
        self.votes_per_aspect = votes_per_aspect
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.parse_retries = parse_retries
        self.max_workers = max_workers
        self.language = language

    def _vote(self, theorem: NLTheorem, x: Formalization, aspect: JudgeAspect, vote: int) -> JudgeVerdict:
        system, user = build_aspect_prompt(theorem, x, aspect, self.language)
        last_error: VerdictParseError | None = None
        for attempt in range(self.parse_retries + 1):
            req = ChatRequest(
                system, user, self.temperature, self.max_tokens,
                meta={"theorem": theorem.id, "candidate": x.id, "aspect": aspect.aspect_id,
                      "vote": vote, "attempt": attempt, "role": "judge"},
            )
            try:
                raw = self.backend.complete(req)
            except BackendError as exc:
                raise JudgeUnavailable(f"judge backend failed on {aspect.aspect_id}: {exc}") from exc
            try:
                return parse_verdict(raw, aspect)
            except VerdictParseError as exc:
                last_error = exc
                logger.info("unparseable verdict for %s (%s), attempt %d", aspect.aspect_id, exc, attempt + 1)
        return JudgeVerdict(aspect, 0, f"unparseable judge response: {last_error}", "")

    def score_soft_dimensions(
        self, theorem: NLTheorem, x: Formalization
    ) -> tuple[tuple[float, float, float], list[JudgeVerdict]]:
        if not x.body.strip():
            raise ValueError("cannot judge an empty formalization")
        jobs = [(a, v) for a in self.registry for v in range(self.votes_per_aspect)]
        if self.max_workers > 1:
            with ThreadPoolExecutor(self.max_workers) as pool:
                results = list(pool.map(lambda j: self._vote(theorem, x, *j), jobs))
        else:
            results = [self._vote(theorem, x, a, v) for a, v in jobs]
        per_aspect: dict[str, list[int]] = {}
        for jv in results:
            per_aspect.setdefault(jv.aspect.aspect_id, []).append(jv.judgement)
        estimates = []
        for dim in SOFT_DIMENSIONS:
            aspects = aspects_for(dim, self.registry)
            scores = [sum(per_aspect[a.aspect_id]) / self.votes_per_aspect for a in aspects]
            estimates.append(fuse_dimension(scores, self.weights.for_dimension(dim)))
        return (estimates[0], estimates[1], estimates[2]), results

    def assess(self, theorem: NLTheorem, x: Formalization) -> SoftAssessment:
        (lp, mc, fq), verdicts = self.score_soft_dimensions(theorem, x)
        return SoftAssessment(lp, mc, fq, tuple(v.stored() for v in verdicts))


FEEDBACK_ALL = "ALL"


def _normalize_dims(dims: Iterable[str | Dimension]) -> list[Dimension]:
    chosen: set[Dimension] = set()
    for d in dims:
        key = d.value if isinstance(d, Dimension) else str(d).upper()
        if key == FEEDBACK_ALL:
            chosen.update(SOFT_DIMENSIONS)
        else:
            chosen.add(Dimension(key))
    return [d for d in SOFT_DIMENSIONS if d in chosen]


def feedback_digest(
    verdicts: Sequence[Verdict | JudgeVerdict],
    dims: Iterable[str | Dimension],
    registry: Sequence[JudgeAspect] = ASPECTS,
) -> str:
    """Judge feedback text for refinement prompts, in registry order.

    With several votes per aspect every vote gets its own block.
    """
    selected = _normalize_dims(dims)
    if not selected:
        raise ValueError("no feedback dimensions selected")
    stored = [v.stored() if isinstance(v, JudgeVerdict) else v for v in verdicts]
    blocks = []
    for dim in selected:
        for aspect in aspects_for(dim, registry):
            for v in stored:
                if v.dimension is dim and v.aspect_id == aspect.aspect_id:
                    blocks.append(
                        f"Aspect: {aspect.description}\n\n"
                        f"Evaluation: Explanation: {v.explanation}\n\n"
                        f"Judgement: {bool(v.judgement)}"
                    )
    if not blocks:
        raise ValueError(
            "no verdicts available for feedback dimensions "
            + ", ".join(d.value for d in selected)
        )
    return "\n\n".join(blocks)
