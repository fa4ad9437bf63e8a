"""Shared fixtures: deterministic scripted generators, judges and theorems."""

from __future__ import annotations

import hashlib
import json

from monorefine.backends import ChatRequest, ScriptedBackend
from monorefine.generators import GeneratorSpec
from monorefine.judges import DELIMITER, SoftAssessment, format_verdict
from monorefine.model import Dimension, NLTheorem, Role, Verdict
from monorefine.process import MonotonicProcess, ProcessConfig
from monorefine.prover import MockProver, ProverGate

THEOREM = NLTheorem("t1", "For all natural n, n + 0 = n.", "By the definition of addition.")


def wrap(body: str) -> str:
    return f"{DELIMITER}\n{body}\n{DELIMITER}"


def meta_hash(req: ChatRequest, n: int = 8) -> str:
    blob = json.dumps(dict(req.meta), sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:n]


def body_for(req: ChatRequest, ok: bool = True) -> str:
    """A unique body per call path; ``ok`` False inserts a placeholder."""
    tag = meta_hash(req)
    proof = "rfl" if ok else "by sorry"
    return f"theorem g_{req.meta['generator'].replace('-', '_')}_{tag} : 1 = 1 := {proof}"


def generator(name: str, role: Role, fn, dims=()) -> GeneratorSpec:
    return GeneratorSpec(name, role, ScriptedBackend(fn), tuple(dims) if role is Role.REG else ())


def always(ok: bool = True):
    return lambda req: wrap(body_for(req, ok))


class TableJudge:
    """SoftJudge returning scores from a body->scores table, else a hash-derived default."""

    def __init__(self, table=None, default=None):
        self.table = dict(table or {})
        self.default = default
        self.calls: list[str] = []

    def assess(self, theorem, x) -> SoftAssessment:
        self.calls.append(x.body)
        if x.body in self.table:
            lp, mc, fq = self.table[x.body]
        elif self.default is not None:
            lp, mc, fq = self.default
        else:
            h = hashlib.sha256(x.body.encode()).digest()
            lp, mc, fq = (h[0] % 5) / 4, (h[1] % 5) / 4, (h[2] % 5) / 4
        verdicts = tuple(
            Verdict(d, a, int(v >= 0.5), f"{a} looks {'fine' if v >= 0.5 else 'off'}")
            for d, a, v in ((Dimension.LP, "Formula", lp), (Dimension.MC, "Concept", mc),
                            (Dimension.FQ, "Conciseness", fq))
        )
        return SoftAssessment(lp, mc, fq, verdicts)


def process(oog, fvr=(), reg=(), judge=None, prover=None, **kw) -> MonotonicProcess:
    cfg = ProcessConfig(tuple(oog), tuple(fvr), tuple(reg), **kw)
    return MonotonicProcess(cfg, prover or ProverGate(MockProver(default_pass=True)),
                            judge or TableJudge())


def judge_reply(true_aspects: set[str] | None = None):
    """Scripted judge backend: True for aspects whose description is in the set (None = all)."""
    from monorefine.judges import ASPECTS

    def fn(req: ChatRequest) -> str:
        for a in ASPECTS:
            if a.description in req.system:
                ok = true_aspects is None or a.aspect_id in true_aspects
                return format_verdict(f"checked {a.aspect_id}", ok)
        raise AssertionError("aspect not found in prompt")

    return fn


E2E_THEOREMS = [NLTheorem(f"e2e_{i}", f"Show that {i} + 0 = {i}.", f"Adding zero to {i} leaves {i}.")
                for i in range(3)]


def e2e_replay(theorems=E2E_THEOREMS) -> dict:
    """Replay rules for a full run over ``theorems``.

    The first theorem's one-off draft carries a placeholder, so it goes
    through repair; refined bodies satisfy every judge aspect, drafts miss
    the conciseness aspect.
    """
    rules = []
    for i, t in enumerate(theorems):
        draft = f"theorem e2e_{i} : {i} + 0 = {i} := " + ("by sorry" if i == 0 else "by simp")
        rules += [
            {"contains": ["According to the theorem prover", t.nl_statement],
             "responses": [wrap(f"theorem e2e_{i}_repaired : {i} + 0 = {i} := rfl")]},
            {"contains": ["Aspect:", t.nl_statement],
             "responses": [wrap(f"theorem e2e_{i}_refined : {i} + 0 = {i} := rfl")]},
            {"contains": ["Give me the Lean4 formal code", t.nl_statement], "responses": [wrap(draft)]},
        ]
    judge = "Your task is to evaluate a specific aspect"
    rules += [
        {"contains": [judge, "_refined"], "responses": [format_verdict("All good.", True)]},
        {"contains": [judge, "minimal, non-redundant"], "responses": [format_verdict("Verbose.", False)]},
        {"contains": [judge], "responses": [format_verdict("Fine.", True)]},
    ]
    return {"rules": rules}


def e2e_config(base_url: str) -> dict:
    return {
        "seed": 1,
        "max_steps": 4,
        "parallelism": 2,
        "backends": {"llm": {"type": "http", "base_url": base_url, "model": "replay",
                             "api_key_env": "MONOREFINE_E2E_KEY", "attempts": 2, "base_delay": 0.0}},
        "generators": [
            {"name": "oog", "role": "OOG", "backend": "llm"},
            {"name": "fvr", "role": "FVR", "backend": "llm"},
            {"name": "reg-all", "role": "REG", "backend": "llm", "feedback": ["ALL"]},
        ],
        "judge": {"backend": "llm", "votes_per_aspect": 1},
        "prover": {"type": "mock", "default_pass": True},
    }
