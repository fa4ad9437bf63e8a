"""Dataset-level aggregation of run traces and report emission.

Rows hold dataset means of the incumbent's FV bit, soft estimates and
plug-in estimate, as percentages. Traces that stopped early carry their
last incumbent forward, so every step up to the horizon has a row.
"""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

from .model import InvariantViolation, IncumbentRef, RunTrace
from .responsiveness import ResponsivenessMap

COLUMNS = ("fv_pct", "lp_pct", "mc_pct", "fq_pct", "j_pct")
ROW_TOLERANCE = 1e-9


@dataclass(frozen=True)
class AggregateRow:
    label: str
    fv_pct: float
    lp_pct: float
    mc_pct: float
    fq_pct: float
    j_pct: float

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, c) for c in COLUMNS)

    def rounded(self, ndigits: int = 2) -> AggregateRow:
        return AggregateRow(self.label, *(round(v, ndigits) for v in self.values()))


def check_row(row: AggregateRow, tol: float = ROW_TOLERANCE) -> None:
    """Raise InvariantViolation unless the row is internally consistent.

    Per sample the plug-in estimate is bounded by both the FV bit and the
    soft mean, so the same holds for dataset means.
    """
    for c in COLUMNS:
        v = getattr(row, c)
        if not (-tol <= v <= 100.0 + tol) or math.isnan(v):
            raise InvariantViolation(f"{row.label}: {c}={v} outside [0, 100]")
    if row.j_pct > row.fv_pct + tol:
        raise InvariantViolation(f"{row.label}: j_pct {row.j_pct} exceeds fv_pct {row.fv_pct}")
    soft_mean = (row.lp_pct + row.mc_pct + row.fq_pct) / 3.0
    if row.j_pct > soft_mean + tol:
        raise InvariantViolation(f"{row.label}: j_pct {row.j_pct} exceeds soft mean {soft_mean}")


def incumbent_at(trace: RunTrace, step: int) -> IncumbentRef:
    """Incumbent after ``step``, carried forward past the end of the trace."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if not trace.records:
        return trace.final
    return trace.records[min(step, len(trace.records) - 1)].incumbent_after


def sample_values(ref: IncumbentRef) -> tuple[float, float, float, float, float]:
    """(fv, lp, mc, fq, j) for one incumbent; the sentinel counts as all zeros."""
    if ref.scores is None:
        return (0.0, 0.0, 0.0, 0.0, 0.0)
    s = ref.scores
    return (float(s.fv), s.lp, s.mc, s.fq, ref.estimate)


def aggregate_step(traces: Sequence[RunTrace], step: int, label: str | None = None) -> AggregateRow:
    if not traces:
        raise ValueError("no traces to aggregate")
    sums = [0.0] * 5
    for t in traces:
        for i, v in enumerate(sample_values(incumbent_at(t, step))):
            sums[i] += v
    n = len(traces)
    row = AggregateRow(label if label is not None else f"step {step}",
                       *(100.0 * s / n for s in sums))
    check_row(row)
    return row


def delta_table(baseline: AggregateRow, variant: AggregateRow) -> dict[str, tuple[float, str]]:
    """Per-column ``variant - baseline`` with a signed two-decimal rendering."""
    out = {}
    for c in COLUMNS:
        d = getattr(variant, c) - getattr(baseline, c)
        d = round(d, 10)
        out[c] = (d, f"{d:+.2f}")
    return out


def cohens_d(paired_deltas: Sequence[float]) -> float | None:
    """Mean over sample standard deviation; None when the deviation is zero."""
    if len(paired_deltas) < 2:
        raise ValueError("need at least two paired deltas")
    sd = statistics.stdev(paired_deltas)
    if sd == 0:
        return None
    return statistics.fmean(paired_deltas) / sd


def improvements(traces: Sequence[RunTrace], step: int) -> list[float]:
    """Per-theorem change in the incumbent estimate between step 0 and ``step``.

    The sentinel counts as 0 so that a theorem without any accepted
    candidate contributes no improvement.
    """
    out = []
    for t in traces:
        first = sample_values(incumbent_at(t, 0))[4]
        later = sample_values(incumbent_at(t, step))[4]
        out.append(later - first)
    return out


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _config_lines(config: Mapping[str, Any] | None) -> list[str]:
    if not config:
        return []
    return ["# config: " + json.dumps(config, sort_keys=True, ensure_ascii=False)]


def rows_to_csv(rows: Sequence[AggregateRow], config: Mapping[str, Any] | None = None) -> str:
    buf = io.StringIO()
    for line in _config_lines(config):
        buf.write(line + "\r\n")
    w = csv.writer(buf)
    w.writerow(["label", *COLUMNS])
    for r in rows:
        w.writerow([r.label, *(_fmt(v) for v in r.values())])
    return buf.getvalue()


def rows_from_csv(text: str) -> list[AggregateRow]:
    body = "\n".join(ln for ln in text.split("\n") if not ln.startswith("#"))
    reader = csv.reader(io.StringIO(body, newline=""))
    header = next(reader)
    if tuple(header) != ("label", *COLUMNS):
        raise ValueError(f"unexpected header {header!r}")
    return [AggregateRow(rec[0], *(float(v) for v in rec[1:])) for rec in reader if rec]


def _horizon(traces: Sequence[RunTrace], steps: int | None) -> int:
    if steps is not None:
        return steps
    return max((len(t.records) for t in traces), default=0)


def step_rows(traces: Sequence[RunTrace], steps: int | None = None) -> list[AggregateRow]:
    return [aggregate_step(traces, s) for s in range(_horizon(traces, steps))]


def emit_report(
    traces: Sequence[RunTrace],
    destination: str | Path,
    *,
    config: Mapping[str, Any] | None = None,
    steps: int | None = None,
) -> dict[str, Path]:
    """Write the report suite into ``destination``.

    * ``steps.csv``: one aggregate row per step.
    * ``final_incumbents.json``: per-theorem final incumbents.
    * ``curves.csv``: per-theorem per-step values for plotting.
    * ``responsiveness.json``: pooled responsiveness map.
    * ``improvements.json``: mean and Cohen's d of per-theorem improvements.
    """
    if not traces:
        raise ValueError("no traces to report")
    dest = Path(destination)
    dest.mkdir(parents=True, exist_ok=True)
    horizon = _horizon(traces, steps)
    rows = step_rows(traces, horizon)
    header = dict(config or {})

    paths = {
        "steps": dest / "steps.csv",
        "final": dest / "final_incumbents.json",
        "curves": dest / "curves.csv",
        "responsiveness": dest / "responsiveness.json",
        "improvements": dest / "improvements.json",
    }
    paths["steps"].write_text(rows_to_csv(rows, header), encoding="utf-8", newline="")

    finals = []
    for t in traces:
        ref = t.final
        body = None
        for rec in reversed(t.records):
            c = rec.candidate(ref.id)
            if c is not None:
                body = c.formalization.body
                break
        finals.append({
            "theorem_id": t.theorem_id,
            "incumbent_id": ref.id,
            "estimate": ref.estimate,
            "scores": None if ref.scores is None else ref.scores.to_dict(),
            "body": body,
            "steps": len(t.records),
            "terminal_reason": t.terminal_reason,
            "truncated": t.truncated,
        })
    _write_json(paths["final"], {"config": header, "theorems": finals})

    buf = io.StringIO()
    for line in _config_lines(header):
        buf.write(line + "\r\n")
    w = csv.writer(buf)
    w.writerow(["theorem_id", "step", "incumbent_id", "fv", "lp", "mc", "fq", "j"])
    for t in traces:
        for s in range(horizon):
            ref = incumbent_at(t, s)
            w.writerow([t.theorem_id, s, ref.id, *(repr(v) for v in sample_values(ref))])
    paths["curves"].write_text(buf.getvalue(), encoding="utf-8", newline="")

    _write_json(paths["responsiveness"],
                {"config": header, "generators": ResponsivenessMap.from_traces(traces).to_dict()})

    imp = []
    for s in range(1, horizon):
        deltas = improvements(traces, s)
        d = cohens_d(deltas) if len(deltas) >= 2 else None
        imp.append({"step": s, "mean": statistics.fmean(deltas), "cohens_d": d, "n": len(deltas)})
    _write_json(paths["improvements"], {"config": header, "by_step": imp})
    return paths


def _write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def row_dict(row: AggregateRow) -> dict[str, Any]:
    return asdict(row)
