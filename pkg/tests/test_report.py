from __future__ import annotations

import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from monorefine.model import (
    SENTINEL_REF,
    DimensionScores,
    Formalization,
    IncumbentRef,
    InvariantViolation,
    Origin,
    Role,
    RunTrace,
    ScoredCandidate,
    StepRecord,
)
from monorefine.report import (
    AggregateRow,
    aggregate_step,
    check_row,
    cohens_d,
    delta_table,
    emit_report,
    improvements,
    rows_from_csv,
    rows_to_csv,
    step_rows,
)
from monorefine.simulation import SimWorld, simulate_process


def trace_of(tid, estimates, fv=1, reason="max_steps"):
    """A trace whose incumbent takes the given estimate after each step."""
    records = []
    before = SENTINEL_REF
    for step, est in enumerate(estimates):
        if est is None or (before.scores is not None and est <= before.estimate):
            records.append(StepRecord(step, (), before, before, False))
            continue
        x = Formalization(f"theorem {tid}_{step} : True := trivial", Origin("o", Role.OOG), step)
        s = DimensionScores(fv, est, est, est) if fv else DimensionScores.unscored(0)
        c = ScoredCandidate(x, s, est if fv else 0.0)
        after = IncumbentRef(c.id, c.estimate, s)
        records.append(StepRecord(step, (c,), before, after, True))
        before = after
    return RunTrace(tid, tuple(records), reason)


class TestAggregate:
    def test_two_samples(self):
        row = aggregate_step([trace_of("a", [1.0], reason="perfect_score"), trace_of("b", [0.0], fv=0)], 0)
        assert row.j_pct == 50.0 and row.fv_pct == 50.0

    def test_published_row_consistent(self):
        row = AggregateRow("published", 93.44, 74.08, 90.16, 77.05, 78.22)
        check_row(row)
        assert (row.lp_pct + row.mc_pct + row.fq_pct) / 3 == pytest.approx(80.43, abs=5e-3)
        assert row.j_pct <= row.fv_pct

    def test_carry_forward(self):
        t = trace_of("a", [0.3, 0.5, 0.7], reason="perfect_score")
        assert aggregate_step([t], 5).values() == aggregate_step([t], 2).values()

    def test_sentinel_counts_as_zero(self):
        t = trace_of("a", [None, None])
        assert aggregate_step([t], 1).values() == (0.0,) * 5

    def test_empty(self):
        with pytest.raises(ValueError):
            aggregate_step([], 0)

    def test_row_checks(self):
        with pytest.raises(InvariantViolation):
            check_row(AggregateRow("bad", 50, 90, 90, 90, 60))
        with pytest.raises(InvariantViolation):
            check_row(AggregateRow("bad", 100, 10, 10, 10, 50))
        with pytest.raises(InvariantViolation):
            check_row(AggregateRow("bad", 101, 10, 10, 10, 5))

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.lists(st.one_of(st.none(), st.floats(0, 1)), min_size=1, max_size=4),
                    min_size=2, max_size=8), st.integers(1, 7), st.integers(0, 5))
    def test_linearity(self, ests, cut, step):
        traces = [trace_of(f"t{i}", e) for i, e in enumerate(ests)]
        cut = min(cut, len(traces) - 1)
        a, b = traces[:cut], traces[cut:]
        whole = aggregate_step(traces, step).values()
        ra, rb = aggregate_step(a, step).values(), aggregate_step(b, step).values()
        for w, x, y in zip(whole, ra, rb):
            assert w == pytest.approx((len(a) * x + len(b) * y) / len(traces), abs=1e-9)


class TestDeltas:
    def test_identical(self):
        r = AggregateRow("x", 50, 40, 30, 20, 10)
        assert all(v == 0 for v, _ in delta_table(r, r).values())

    def test_signed_rendering(self):
        base = AggregateRow("oog", 50.41, 60.00, 70.00, 80.00, 30.00)
        var = AggregateRow("oog+fvr", 52.05, 59.39, 70.00, 80.00, 30.00)
        d = delta_table(base, var)
        assert d["fv_pct"][1] == "+1.64"
        assert d["lp_pct"][1] == "-0.61"
        assert d["fv_pct"][0] == pytest.approx(1.64, abs=1e-12)


class TestCohensD:
    def test_examples(self):
        assert cohens_d([0.1, 0.1, 0.1]) is None
        assert cohens_d([1, -1]) == 0.0
        assert cohens_d([2, 4]) == pytest.approx(3 / math.sqrt(2), abs=1e-12)

    def test_too_few(self):
        with pytest.raises(ValueError):
            cohens_d([1.0])

    def test_improvements(self):
        ts = [trace_of("a", [0.2, 0.5]), trace_of("b", [None, 0.4])]
        assert improvements(ts, 1) == pytest.approx([0.3, 0.4])


class TestEmit:
    def _traces(self):
        return [simulate_process(SimWorld.default(s)).trace for s in range(4)]

    def test_files_and_shapes(self, tmp_path):
        paths = emit_report(self._traces(), tmp_path, config={"seed": 0}, steps=6)
        rows = rows_from_csv(paths["steps"].read_text())
        assert len(rows) == 6 and all(len(r.values()) == 5 for r in rows)
        assert paths["steps"].read_text().startswith('# config: {"seed": 0}')
        finals = json.loads(paths["final"].read_text())
        assert len(finals["theorems"]) == 4 and finals["config"] == {"seed": 0}
        assert all(t["body"] for t in finals["theorems"])
        curves = paths["curves"].read_text().splitlines()
        assert len(curves) == 2 + 4 * 6
        resp = json.loads(paths["responsiveness"].read_text())["generators"]
        assert set(resp) <= {"oog", "fvr", "reg-lp-a", "reg-lp-b", "reg-fq"} and "reg-fq" in resp
        imp = json.loads(paths["improvements"].read_text())["by_step"]
        assert [e["step"] for e in imp] == [1, 2, 3, 4, 5]

    def test_csv_round_trip(self):
        rows = step_rows(self._traces(), 6)
        assert rows_from_csv(rows_to_csv(rows, {"k": 1})) == [r.rounded(2) for r in rows]

    @given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1)),
                    min_size=1, max_size=5))
    def test_csv_round_trip_property(self, vals):
        rows = [AggregateRow(f"r,{i}", 100 * f, 100 * a, 100 * b, 100 * c, 100 * f * (a + b + c) / 3).rounded()
                for i, (f, a, b, c) in enumerate(vals)]
        assert rows_from_csv(rows_to_csv(rows)) == rows

    def test_deterministic_bytes(self, tmp_path):
        a = emit_report(self._traces(), tmp_path / "a", config={"seed": 0})
        b = emit_report(self._traces(), tmp_path / "b", config={"seed": 0})
        for k in a:
            assert a[k].read_bytes() == b[k].read_bytes()

    def test_empty(self, tmp_path):
        with pytest.raises(ValueError):
            emit_report([], tmp_path)
