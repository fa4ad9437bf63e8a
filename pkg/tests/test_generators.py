from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from monorefine.backends import BackendError, ScriptedBackend
from monorefine.generators import (
    GenerationContext,
    GeneratorSpec,
    NoCodeBlock,
    build_fvr_prompt,
    build_oog_prompt,
    build_reg_prompt,
    extract_code_block,
    propose,
    sample_proposals,
)
from monorefine.judges import ASPECTS, feedback_digest
from monorefine.model import Dimension, Formalization, NLTheorem, Origin, Role, Verdict
from monorefine.prover import fvr_feedback
from support import wrap
from test_prover import EXAMPLE

GOLDEN = Path(__file__).parent / "golden"
THM = NLTheorem("two", "Show that $2 + 2 = 4$.", "Direct computation.")
X = Formalization("theorem two_two : 2 + 2 = 4 := by\n  #norm_num", Origin("oog", Role.OOG), 0)


def golden(name: str) -> str:
    return (GOLDEN / name).read_text(encoding="utf-8").removesuffix("\n")


class TestPrompts:
    def test_oog_golden(self):
        assert build_oog_prompt(THM) == (golden("oog_system.txt"), golden("oog_user.txt"))

    def test_fvr_golden(self):
        system, user = build_fvr_prompt(THM, X, fvr_feedback(EXAMPLE))
        assert system == golden("refine_system.txt")
        assert user == golden("fvr_user.txt")

    def test_reg_shares_system_prompt(self):
        verdicts = [Verdict(a.dimension, a.aspect_id, 1, "fine") for a in ASPECTS]
        system, user = build_reg_prompt(THM, X, feedback_digest(verdicts, ["FQ"]))
        assert system == build_fvr_prompt(THM, X, "e")[0]
        assert "Here are some feedbacks about the formal code which can be used to help your task: Aspect:" in user
        assert user.count("Aspect:") == 2
        assert "According to the theorem prover" not in user

    def test_one_diagnostic_line(self):
        _, user = build_fvr_prompt(THM, X, "Error on line 1, start column 0, end column None: boom")
        assert "Error on line 1, start column 0, end column None: boom" in user

    @pytest.mark.parametrize("builder", [build_fvr_prompt, build_reg_prompt])
    def test_empty_feedback_rejected(self, builder):
        with pytest.raises(ValueError):
            builder(THM, X, " \n")


class TestExtraction:
    def test_delimited(self):
        raw = "Sure!\n%%%%%%%%%%\n\ntheorem a : True := trivial\n\n%%%%%%%%%%\nbye"
        assert extract_code_block(raw) == "theorem a : True := trivial"

    def test_last_block_wins(self):
        raw = wrap("theorem a : True := trivial") + "\nrevised:\n" + wrap("theorem b : True := trivial")
        assert extract_code_block(raw) == "theorem b : True := trivial"

    def test_fence_inside(self):
        assert extract_code_block(wrap("```lean\nimport Mathlib\ntheorem a : True := trivial\n```")) == \
            "import Mathlib\ntheorem a : True := trivial"

    def test_undelimited_code_prefix(self):
        assert extract_code_block("\nimport Mathlib\n\ntheorem x : True := trivial\n") == \
            "import Mathlib\n\ntheorem x : True := trivial"

    @pytest.mark.parametrize("raw", ["", "   ", "I cannot do that.", wrap("  \n ")])
    def test_no_code(self, raw):
        with pytest.raises(NoCodeBlock):
            extract_code_block(raw)

    @given(st.text(st.characters(blacklist_characters="%\r", blacklist_categories=("Cs",)), min_size=1)
           .filter(lambda s: s.strip()))
    def test_idempotent(self, body):
        once = extract_code_block(wrap(body))
        assert extract_code_block(wrap(once)) == once


class TestSpec:
    def test_dims_iff_reg(self):
        be = ScriptedBackend(lambda r: "")
        with pytest.raises(ValueError):
            GeneratorSpec("r", Role.REG, be)
        with pytest.raises(ValueError):
            GeneratorSpec("o", Role.OOG, be, ("LP",))
        with pytest.raises(ValueError):
            GeneratorSpec("r", Role.REG, be, ("XX",))
        with pytest.raises(ValueError):
            GeneratorSpec("a.b", Role.OOG, be)
        assert GeneratorSpec("r", Role.REG, be, ("lp", Dimension.FQ)).reg_feedback_dims == ("LP", "FQ")


class TestPropose:
    def test_two_proposals(self):
        be = ScriptedBackend(lambda r: wrap(f"theorem s{r.meta['sample']} : True := trivial"))
        out = propose(GeneratorSpec("oog", Role.OOG, be), THM, None, 2, step=3)
        assert [p.formalization.id for p in out] == ["t3.oog.0", "t3.oog.1"]
        assert all(p.formalization.parent_id is None for p in out)
        assert be.calls[0].temperature == 0.7

    def test_prose_dropped(self):
        be = ScriptedBackend(lambda r: "no idea" if r.meta["sample"] == 1 else wrap("theorem a : True := trivial"))
        spec = GeneratorSpec("oog", Role.OOG, be)
        assert len(propose(spec, THM, None, 3)) == 2
        attempts = sample_proposals(spec, THM, None, 3)
        assert [p.extraction_ok for p in attempts] == [True, False, True]

    def test_context_required(self):
        spec = GeneratorSpec("fvr", Role.FVR, ScriptedBackend(lambda r: ""))
        with pytest.raises(ValueError):
            propose(spec, THM, None, 1)
        with pytest.raises(ValueError):
            propose(GeneratorSpec("o", Role.OOG, ScriptedBackend(lambda r: "")), THM,
                    GenerationContext(X, "fb"), 1)

    def test_n_positive(self):
        with pytest.raises(ValueError):
            propose(GeneratorSpec("o", Role.OOG, ScriptedBackend(lambda r: "")), THM, None, 0)

    def test_parent_linked_and_backend_failure(self):
        def fn(r):
            if r.meta["sample"] == 0:
                raise BackendError("down")
            return wrap("theorem fixed : True := trivial")

        spec = GeneratorSpec("fvr", Role.FVR, ScriptedBackend(fn))
        attempts = sample_proposals(spec, THM, GenerationContext(X, "Error on line 1"), 2, step=1)
        assert attempts[0].backend_failed and not attempts[0].extraction_ok
        assert attempts[1].formalization.parent_id == X.id
        assert attempts[1].formalization.origin.role is Role.FVR

    def test_concurrent_matches_sequential(self):
        fn = lambda r: wrap(f"theorem s{r.meta['sample']} : True := trivial")  # noqa: E731
        a = propose(GeneratorSpec("o", Role.OOG, ScriptedBackend(fn)), THM, None, 5)
        b = propose(GeneratorSpec("o", Role.OOG, ScriptedBackend(fn), max_workers=4), THM, None, 5)
        assert [p.formalization for p in a] == [p.formalization for p in b]
