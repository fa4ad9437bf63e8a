"""Generator roles: one-off generation, FV repair and recurrent refinement.

Each role is a prompt builder plus a backend call plus code-block
extraction. Prompts keep the exact wording the generators were tuned on;
only the natural-language fields, the code and the feedback vary.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from .backends import BackendError, ChatBackend, ChatRequest
from .judges import FEEDBACK_ALL, last_delimited_region
from .model import Dimension, Formalization, NLTheorem, Origin, Role

logger = logging.getLogger(__name__)

DEFAULT_CODE_PREFIXES = ("import", "theorem", "example", "open", "--")

_WRAP_INSTRUCTIONS = """\
1. You should give the formal code directly without any additional comments or explanations.

2. In case that you need to import any necessary preambles, you should not import any fake (non-exist) preambles.

3. You should wrap the formal code in a way illustrated as the following:

%%%%%%%%%%

Your Formal Code

%%%%%%%%%%

Strictly follow the instructions that have been claimed."""

OOG_SYSTEM_PROMPT = """\
You are an expert in formal language Lean4.

You will be given a mathematical statement and its proof written in natural language and LaTeX symbols.

Your task is to provide the formal code of the given natural language mathematical statement and its proof in Lean4 with the following instructions:

""" + _WRAP_INSTRUCTIONS

OOG_USER_TEMPLATE = """\
Natural language statement: {statement}

Natural language proof: {proof}

Give me the Lean4 formal code of them:"""

REFINE_SYSTEM_PROMPT = """\
You are an expert in formal language Lean4.

You will be given a mathematical statement and its proof written in natural language and LaTeX symbols.

You will also be given a formal code which attempted to describe the given mathematical statement and its proof in Lean4.

Your task is to refine the given formal code to make it correct while maintaining the alignment with the given natural language mathematical statement and proof.

Here are some instructions for your task:

""" + _WRAP_INSTRUCTIONS

REFINE_USER_TEMPLATE = """\
Natural language statement: {statement}

Natural language proof: {proof}

There are some Lean4 formal codes describing the given mathematical statement and its proof: {code}

You should refine the formal code for your task to make it correct.

Here are some feedbacks about the formal code which can be used to help your task: {feedback}"""

PROVER_FEEDBACK_HEADER = (
    "According to the theorem prover, the error details of the provided formal code are:"
)


class NoCodeBlock(ValueError):
    """A response held no extractable formal code."""


def build_oog_prompt(theorem: NLTheorem) -> tuple[str, str]:
    user = OOG_USER_TEMPLATE.format(statement=theorem.nl_statement, proof=theorem.nl_proof)
    return OOG_SYSTEM_PROMPT, user


def _refine_prompt(theorem: NLTheorem, x: Formalization, feedback: str) -> tuple[str, str]:
    user = REFINE_USER_TEMPLATE.format(
        statement=theorem.nl_statement, proof=theorem.nl_proof, code=x.body, feedback=feedback,
    )
    return REFINE_SYSTEM_PROMPT, user


def build_fvr_prompt(theorem: NLTheorem, x: Formalization, error_feedback: str) -> tuple[str, str]:
    """Repair prompt; ``error_feedback`` is the rendered prover diagnostics."""
    if not error_feedback.strip():
        raise ValueError("repair prompts need nonempty prover feedback")
    return _refine_prompt(theorem, x, f"{PROVER_FEEDBACK_HEADER}\n\n{error_feedback}")


def build_reg_prompt(theorem: NLTheorem, x: Formalization, judge_feedback: str) -> tuple[str, str]:
    if not judge_feedback.strip():
        raise ValueError("refinement prompts need nonempty judge feedback")
    return _refine_prompt(theorem, x, judge_feedback)


def _trim_blank_lines(text: str) -> str:
    lines = text.split("\n")
    while lines and not lines[0].strip():
        lines.pop(0)
    while lines and not lines[-1].strip():
        lines.pop()
    return "\n".join(lines)


_FENCE_OPEN = re.compile(r"^```[\w+-]*[ \t]*$")


def _strip_fence(text: str) -> str:
    lines = text.split("\n")
    if len(lines) >= 2 and _FENCE_OPEN.match(lines[0].strip()) and lines[-1].strip() == "```":
        return _trim_blank_lines("\n".join(lines[1:-1]))
    return text


def extract_code_block(raw: str, prefixes: Sequence[str] = DEFAULT_CODE_PREFIXES) -> str:
    """Formal code from a generator response.

    Takes the last ``%%%%%%%%%%``-delimited region. Without delimiters the
    whole response is accepted if it starts with one of ``prefixes``. A
    markdown fence wrapping the code is removed in either case.
    """
    if not raw or not raw.strip():
        raise NoCodeBlock("empty response")
    region = last_delimited_region(raw)
    if region is not None:
        body = _strip_fence(_trim_blank_lines(region.replace("\r\n", "\n")))
        if not body.strip():
            raise NoCodeBlock("delimited block is empty")
        return body
    body = _strip_fence(_trim_blank_lines(raw.replace("\r\n", "\n")))
    if body.lstrip().startswith(tuple(prefixes)):
        return body
    raise NoCodeBlock("no delimited code block and no recognizable code prefix")


@dataclass(frozen=True)
class GeneratorSpec:
    """A configured generator: its role, backend and decoding parameters.

    ``samples`` is the default per-step proposal budget.
    """

    name: str
    role: Role
    backend: ChatBackend = field(compare=False, repr=False)
    reg_feedback_dims: tuple[str, ...] = ()
    temperature: float = 0.7
    max_tokens: int | None = None
    samples: int = 1
    max_workers: int = 1

    def __post_init__(self) -> None:
        if not self.name or "." in self.name:
            raise ValueError(f"generator name must be nonempty and dot-free: {self.name!r}")
        dims = tuple(d.value if isinstance(d, Dimension) else str(d).upper()
                     for d in self.reg_feedback_dims)
        for d in dims:
            if d != FEEDBACK_ALL and d not in {x.value for x in Dimension}:
                raise ValueError(f"unknown feedback dimension {d!r}")
        object.__setattr__(self, "reg_feedback_dims", dims)
        if (self.role is Role.REG) != bool(dims):
            raise ValueError("reg_feedback_dims must be nonempty exactly for REG generators")
        if self.samples < 0:
            raise ValueError("samples must be >= 0")


@dataclass(frozen=True)
class GenerationContext:
    """The formalization being refined and the feedback about it."""

    parent: Formalization
    feedback: str


@dataclass(frozen=True)
class CandidateProposal:
    formalization: Formalization | None
    raw_response: str
    extraction_ok: bool
    error: str = ""
    backend_failed: bool = False


def build_prompt(spec: GeneratorSpec, theorem: NLTheorem, context: GenerationContext | None):
    if spec.role is Role.OOG:
        if context is not None:
            raise ValueError("one-off generators take no context")
        return build_oog_prompt(theorem)
    if context is None:
        raise ValueError(f"{spec.role.value} generator {spec.name!r} requires a context")
    if spec.role is Role.FVR:
        return build_fvr_prompt(theorem, context.parent, context.feedback)
    return build_reg_prompt(theorem, context.parent, context.feedback)


def sample_proposals(
    spec: GeneratorSpec,
    theorem: NLTheorem,
    context: GenerationContext | None,
    n: int,
    *,
    step: int = 0,
    first_ordinal: int = 0,
    extra_meta: dict | None = None,
) -> list[CandidateProposal]:
    """All ``n`` sampling attempts, failed ones included (``extraction_ok`` False).

    Ordinals ``first_ordinal .. first_ordinal+n-1`` are reserved up front so
    identities do not depend on which samples fail.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    system, user = build_prompt(spec, theorem, context)
    parent_id = context.parent.id if context is not None else None
    origin = Origin(spec.name, spec.role)

    def one(i: int) -> CandidateProposal:
        ordinal = first_ordinal + i
        meta = {"theorem": theorem.id, "step": step, "generator": spec.name,
                "sample": ordinal, "parent": parent_id or ""}
        if extra_meta:
            meta.update(extra_meta)
        req = ChatRequest(system, user, spec.temperature, spec.max_tokens, meta=meta)
        try:
            raw = spec.backend.complete(req)
        except BackendError as exc:
            logger.warning("generator %s sample %d failed: %s", spec.name, ordinal, exc)
            return CandidateProposal(None, "", False, str(exc), backend_failed=True)
        try:
            body = extract_code_block(raw)
        except NoCodeBlock as exc:
            logger.info("dropping proposal %s sample %d: %s", spec.name, ordinal, exc)
            return CandidateProposal(None, raw, False, str(exc))
        x = Formalization(body, origin, step, ordinal, parent_id)
        return CandidateProposal(x, raw, True)

    if spec.max_workers > 1 and n > 1:
        with ThreadPoolExecutor(min(spec.max_workers, n)) as pool:
            return list(pool.map(one, range(n)))
    return [one(i) for i in range(n)]


def propose(
    spec: GeneratorSpec,
    theorem: NLTheorem,
    context: GenerationContext | None,
    n: int,
    *,
    step: int = 0,
    first_ordinal: int = 0,
) -> list[CandidateProposal]:
    """Up to ``n`` usable proposals; failures are logged and dropped."""
    if n < 1:
        raise ValueError("n must be positive")
    return [p for p in sample_proposals(spec, theorem, context, n, step=step,
                                        first_ordinal=first_ordinal) if p.extraction_ok]
