from __future__ import annotations

import json
import re
import sys
import textwrap

import pytest
from hypothesis import given
from hypothesis import strategies as st

from monorefine.prover import (
    CommandProver,
    DiagnosticMessage,
    MockProver,
    ProverDiagnostics,
    ProverGate,
    ProverUnavailable,
    format_error_feedback,
    fvr_feedback,
    parse_jsonl_diagnostics,
    parse_text_diagnostics,
)

LINE_RE = re.compile(r"^Error on line (\d+), start column (\d+), end column (\d+|None): (.*)$")

EXAMPLE = ProverDiagnostics(False, (
    DiagnosticMessage(5, 0, 1, "unexpected token '#'; expected command"),
    DiagnosticMessage(138, 0, None, "unexpected end of input; expected '{' or indented tactic sequence"),
))


class TestFeedbackFormat:
    def test_example_lines_byte_exact(self):
        assert format_error_feedback(EXAMPLE) == (
            "Error on line 5, start column 0, end column 1: unexpected token '#'; expected command\n"
            "Error on line 138, start column 0, end column None: unexpected end of input; "
            "expected '{' or indented tactic sequence"
        )

    def test_passing_rejected(self):
        with pytest.raises(ValueError):
            format_error_feedback(ProverDiagnostics(True))

    def test_multiline_text_flattened(self):
        d = ProverDiagnostics(False, (DiagnosticMessage(1, 2, 3, "a\nb"),))
        assert format_error_feedback(d) == "Error on line 1, start column 2, end column 3: a b"

    def test_truncation(self):
        msgs = tuple(DiagnosticMessage(i + 1, 0, None, "x" * 300) for i in range(40))
        text = fvr_feedback(ProverDiagnostics(False, msgs))
        lines = text.split("\n")
        assert len(text) <= 4000 and len(lines) < 20
        assert all(LINE_RE.match(line) for line in lines)
        short = tuple(DiagnosticMessage(i + 1, 0, 1, "e") for i in range(40))
        assert len(fvr_feedback(ProverDiagnostics(False, short)).split("\n")) == 20

    @given(st.lists(st.tuples(st.integers(1, 10**6), st.integers(0, 10**4),
                              st.one_of(st.none(), st.integers(0, 10**4)),
                              st.text(st.characters(blacklist_categories=("Cc", "Cs", "Zl", "Zp")))),
                    min_size=1, max_size=10))
    def test_round_trip_grammar(self, items):
        d = ProverDiagnostics(False, tuple(DiagnosticMessage(*t) for t in items))
        lines = format_error_feedback(d).split("\n")
        assert len(lines) == len(items)
        for line, (ln, s, e, _) in zip(lines, items):
            m = LINE_RE.match(line)
            assert m is not None
            assert (int(m[1]), int(m[2]), None if m[3] == "None" else int(m[3])) == (ln, s, e)


class TestGate:
    def test_pass_and_fail(self):
        mock = MockProver()
        mock.add("bad", EXAMPLE.messages)
        gate = ProverGate(mock)
        assert gate.check_validity("theorem a : True := trivial")[0] == 1
        fv, diag = gate.check_validity("bad")
        assert fv == 0 and diag.messages == EXAMPLE.messages

    def test_placeholder_blocked_even_when_checker_accepts(self):
        fv, diag = ProverGate(MockProver()).check_validity("theorem a : 1 = 1 := by\n  sorry")
        assert fv == 0
        assert "sorry" in diag.messages[0].text and diag.messages[0].line == 2

    @pytest.mark.parametrize("body", ["theorem sorry_free : True := trivial",
                                      "theorem a : True := trivial -- no sorry here",
                                      "theorem a : True := trivial\n-- admit later"])
    def test_placeholder_word_boundaries(self, body):
        assert ProverGate(MockProver()).check_validity(body)[0] == 1

    def test_admit(self):
        assert ProverGate(MockProver()).check_validity("example : True := by admit")[0] == 0

    def test_empty_body(self):
        with pytest.raises(ValueError):
            ProverGate(MockProver()).check_validity("  \n")

    def test_mock_from_dict(self):
        from monorefine.prover import fingerprint
        m = MockProver.from_dict({"default_pass": False, "table": {
            fingerprint("ok"): True,
            fingerprint("no"): [{"line": 1, "start_col": 0, "text": "boom"}]}})
        assert m.run("ok", 1).passed
        assert m.run("no", 1).messages[0].text == "boom"
        assert not m.run("other", 1).passed


class TestParsers:
    def test_text(self):
        out = textwrap.dedent("""\
            /tmp/x.lean:5:0: error: unexpected token '#'; expected command
            /tmp/x.lean:7:2: warning: unused variable
            /tmp/x.lean:9:4: error: type mismatch
              h
            has type P
            """)
        msgs = parse_text_diagnostics(out)
        assert [(m.line, m.start_col, m.end_col) for m in msgs] == [(5, 0, None), (9, 4, None)]
        assert msgs[1].text == "type mismatch h has type P"

    def test_jsonl(self):
        out = "\n".join([
            json.dumps({"severity": "error", "pos": {"line": 5, "column": 0},
                        "endPos": {"line": 5, "column": 1}, "data": "unexpected token"}),
            json.dumps({"severity": "warning", "pos": {"line": 1, "column": 0}, "data": "w"}),
            json.dumps({"line": 138, "column": 0, "end_column": None, "message": "eof"}),
            "not json",
        ])
        msgs = parse_jsonl_diagnostics(out)
        assert [(m.line, m.start_col, m.end_col, m.text) for m in msgs] == [
            (5, 0, 1, "unexpected token"), (138, 0, None, "eof")]


CHECKER = """\
import json, sys, time
src = open(sys.argv[2]).read()
mode = sys.argv[1]
if "slow" in src:
    time.sleep(5)
if "bad" in src:
    if mode == "text":
        print(sys.argv[2] + ":3:1: error: unknown identifier 'bad'")
    elif mode == "jsonl":
        print(json.dumps({"severity": "error", "pos": {"line": 3, "column": 1}, "endPos": None,
                          "data": "unknown identifier 'bad'"}))
    else:
        print("something odd happened")
    sys.exit(1)
"""


class TestCommandProver:
    @pytest.fixture
    def script(self, tmp_path):
        p = tmp_path / "checker.py"
        p.write_text(CHECKER)
        return p

    @pytest.mark.parametrize("mode", ["text", "jsonl"])
    def test_modes(self, script, mode):
        cp = CommandProver([sys.executable, str(script), mode, "{file}"],
                           diagnostic_format=mode)
        assert cp.run("theorem ok : True := trivial", 10).passed
        d = cp.run("bad", 10)
        assert not d.passed
        assert format_error_feedback(d) == \
            "Error on line 3, start column 1, end column None: unknown identifier 'bad'"

    def test_unparsed_output_still_fails(self, script):
        d = CommandProver([sys.executable, str(script), "raw", "{file}"]).run("bad", 10)
        assert not d.passed and "something odd happened" in d.messages[0].text

    def test_timeout(self, script):
        d = CommandProver([sys.executable, str(script), "text", "{file}"]).run("slow", 0.5)
        assert not d.passed and d.timed_out

    def test_missing_binary(self):
        with pytest.raises(ProverUnavailable):
            CommandProver("/nonexistent/checker {file}").run("x", 1)

    def test_template_requires_file(self):
        with pytest.raises(ValueError):
            CommandProver("lake env lean")
