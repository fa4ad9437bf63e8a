"""JSON encoding of traces and the append-only JSON-lines trace store.

File layout, one JSON object per line::

    {"kind": "header", "schema": 1, "config": {...}}
    {"kind": "step", "schema": 1, "theorem_id": "...", "record": {...}}
    {"kind": "end", "schema": 1, "theorem_id": "...", "terminal_reason": "...", "truncated": false}

Step lines of different theorems may interleave. A partially written last
line (from a crash) is ignored on load and cut off before appending.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from .model import (
    DimensionScores,
    Formalization,
    IncumbentRef,
    Origin,
    Role,
    RunTrace,
    ScoredCandidate,
    StepRecord,
    Verdict,
    check_record_sequence,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
_SECRET_KEY = re.compile(r"(^|[_-])(api[_-]?key|token|secret|password|authorization|credentials?)([_-]|$)")


class TraceFileError(ValueError):
    pass


def redact(obj: Any) -> Any:
    """Copy of a config tree with credential-looking values masked."""
    if isinstance(obj, Mapping):
        out = {}
        for k, v in obj.items():
            key = str(k).lower()
            if _SECRET_KEY.search(key) and not key.endswith("_env"):
                out[k] = "***"
            else:
                out[k] = redact(v)
        return out
    if isinstance(obj, (list, tuple)):
        return [redact(v) for v in obj]
    return obj


def formalization_to_dict(x: Formalization) -> dict[str, Any]:
    return {
        "body": x.body,
        "generator": x.origin.generator,
        "role": x.origin.role.value,
        "step_index": x.step_index,
        "ordinal": x.ordinal,
        "parent_id": x.parent_id,
    }


def formalization_from_dict(d: Mapping[str, Any]) -> Formalization:
    return Formalization(
        d["body"], Origin(d["generator"], Role(d["role"])),
        int(d["step_index"]), int(d["ordinal"]), d.get("parent_id"),
    )


def candidate_to_dict(c: ScoredCandidate) -> dict[str, Any]:
    return {
        "id": c.id,
        "formalization": formalization_to_dict(c.formalization),
        "scores": c.scores.to_dict(),
        "estimate": c.estimate,
        "verdicts": [v.to_dict() for v in c.verdicts],
        "feedback": c.feedback,
    }


def candidate_from_dict(d: Mapping[str, Any]) -> ScoredCandidate:
    return ScoredCandidate(
        formalization_from_dict(d["formalization"]),
        DimensionScores.from_dict(d["scores"]),
        float(d["estimate"]),
        tuple(Verdict.from_dict(v) for v in d.get("verdicts", [])),
        d.get("feedback", ""),
    )


def ref_to_dict(r: IncumbentRef) -> dict[str, Any]:
    return {"id": r.id, "estimate": r.estimate,
            "scores": None if r.scores is None else r.scores.to_dict()}


def ref_from_dict(d: Mapping[str, Any]) -> IncumbentRef:
    scores = d.get("scores")
    return IncumbentRef(d["id"], float(d["estimate"]),
                        None if scores is None else DimensionScores.from_dict(scores))


def record_to_dict(r: StepRecord) -> dict[str, Any]:
    return {
        "step_index": r.step_index,
        "candidates": [candidate_to_dict(c) for c in r.candidates],
        "discarded": [candidate_to_dict(c) for c in r.discarded],
        "incumbent_before": ref_to_dict(r.incumbent_before),
        "incumbent_after": ref_to_dict(r.incumbent_after),
        "accepted": r.accepted,
    }


def record_from_dict(d: Mapping[str, Any]) -> StepRecord:
    return StepRecord(
        int(d["step_index"]),
        tuple(candidate_from_dict(c) for c in d["candidates"]),
        ref_from_dict(d["incumbent_before"]),
        ref_from_dict(d["incumbent_after"]),
        bool(d["accepted"]),
        tuple(candidate_from_dict(c) for c in d.get("discarded", [])),
    )


def trace_to_dict(t: RunTrace) -> dict[str, Any]:
    return {
        "theorem_id": t.theorem_id,
        "terminal_reason": t.terminal_reason,
        "truncated": t.truncated,
        "records": [record_to_dict(r) for r in t.records],
    }


def trace_from_dict(d: Mapping[str, Any]) -> RunTrace:
    return RunTrace(
        d["theorem_id"],
        tuple(record_from_dict(r) for r in d["records"]),
        d["terminal_reason"],
        bool(d.get("truncated", False)),
    )


def dumps(obj: Any) -> str:
    """Canonical single-line JSON."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def trace_bytes(t: RunTrace) -> bytes:
    return dumps(trace_to_dict(t)).encode("utf-8")


@dataclass
class TraceState:
    """What a trace file says about one theorem."""

    records: list[StepRecord] = field(default_factory=list)
    terminal_reason: str | None = None
    truncated: bool = False

    @property
    def finished(self) -> bool:
        return self.terminal_reason is not None and not self.truncated


@dataclass
class LoadedTraceFile:
    config: dict[str, Any] | None
    states: dict[str, TraceState]
    valid_bytes: int

    def traces(self) -> list[RunTrace]:
        """Traces with an end record, in first-appearance order."""
        return [RunTrace(tid, tuple(s.records), s.terminal_reason, s.truncated)
                for tid, s in self.states.items() if s.terminal_reason is not None]


def load_trace_file(path: str | Path) -> LoadedTraceFile:
    data = Path(path).read_bytes()
    end = data.rfind(b"\n") + 1
    if end < len(data):
        logger.warning("ignoring partial last line in %s (%d bytes)", path, len(data) - end)
    config = None
    states: dict[str, TraceState] = {}
    for lineno, raw in enumerate(data[:end].split(b"\n"), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise TraceFileError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        if obj.get("schema") != SCHEMA_VERSION:
            raise TraceFileError(f"{path}:{lineno}: unsupported schema {obj.get('schema')!r}")
        kind = obj.get("kind")
        if kind == "header":
            config = obj.get("config")
            continue
        tid = obj["theorem_id"]
        st = states.setdefault(tid, TraceState())
        if kind == "step":
            rec = record_from_dict(obj["record"])
            if st.terminal_reason is not None and not st.truncated:
                raise TraceFileError(f"{path}:{lineno}: step after end for {tid!r}")
            st.records.append(rec)
            st.terminal_reason = None
            st.truncated = False
        elif kind == "end":
            st.terminal_reason = obj["terminal_reason"]
            st.truncated = bool(obj.get("truncated", False))
        else:
            raise TraceFileError(f"{path}:{lineno}: unknown record kind {kind!r}")
    for tid, st in states.items():
        check_record_sequence(st.records)
    return LoadedTraceFile(config, states, end)


class TraceSink:
    """Append-only, thread-safe JSON-lines writer. Each line is flushed at once."""

    def __init__(self, path: str | Path, config: Mapping[str, Any] | None = None, *, resume: bool = False):
        self.path = Path(path)
        self._lock = threading.Lock()
        if resume and self.path.exists():
            loaded = load_trace_file(self.path)
            with open(self.path, "r+b") as fh:
                fh.truncate(loaded.valid_bytes)
            self._fh = open(self.path, "a", encoding="utf-8")
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w", encoding="utf-8")
            self._write({"kind": "header", "config": redact(dict(config or {}))})

    def _write(self, obj: dict[str, Any]) -> None:
        obj = {"schema": SCHEMA_VERSION, **obj}
        with self._lock:
            self._fh.write(dumps(obj) + "\n")
            self._fh.flush()
            os.fsync(self._fh.fileno())

    def write_step(self, theorem_id: str, record: StepRecord) -> None:
        self._write({"kind": "step", "theorem_id": theorem_id, "record": record_to_dict(record)})

    def write_end(self, trace: RunTrace) -> None:
        self._write({"kind": "end", "theorem_id": trace.theorem_id,
                     "terminal_reason": trace.terminal_reason, "truncated": trace.truncated})

    def close(self) -> None:
        with self._lock:
            self._fh.close()

    def __enter__(self) -> TraceSink:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_traces(path: str | Path, traces: Iterable[RunTrace], config: Mapping[str, Any] | None = None) -> None:
    with TraceSink(path, config) as sink:
        for t in traces:
            for r in t.records:
                sink.write_step(t.theorem_id, r)
            sink.write_end(t)
