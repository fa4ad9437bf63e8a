"""Formal-validity gate: runs a proof checker and renders its diagnostics.

Two backends are provided. :class:`CommandProver` writes the body to a
temporary file and runs an external checker (e.g. ``lake env lean {file}``);
:class:`MockProver` answers from a table keyed by body fingerprints.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import shlex
import subprocess
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

logger = logging.getLogger(__name__)

DEFAULT_BLOCKLIST = ("sorry", "admit")
DEFAULT_TIMEOUT = 120.0
MAX_FEEDBACK_MESSAGES = 20
MAX_FEEDBACK_CHARS = 4000


class ProverUnavailable(RuntimeError):
    """The checker could not be run at all (distinct from a failed check)."""


@dataclass(frozen=True)
class DiagnosticMessage:
    line: int
    start_col: int
    end_col: int | None
    text: str


@dataclass(frozen=True)
class ProverDiagnostics:
    passed: bool
    messages: tuple[DiagnosticMessage, ...] = ()
    elapsed: float = 0.0
    timed_out: bool = False

    def __post_init__(self) -> None:
        if self.passed and self.messages:
            raise ValueError("a passing check carries no messages")
        if self.timed_out and self.passed:
            raise ValueError("a timed-out check cannot pass")


class ProverBackend(Protocol):
    def run(self, body: str, timeout: float) -> ProverDiagnostics: ...


def fingerprint(body: str) -> str:
    return hashlib.sha256(body.encode("utf-8")).hexdigest()


def format_error_feedback(
    d: ProverDiagnostics,
    max_messages: int | None = None,
    max_chars: int | None = None,
) -> str:
    """One ``Error on line ...`` line per message, in input order.

    A missing end column renders as the literal ``None``. Optional limits
    truncate to the first ``max_messages`` lines and whole lines fitting in
    ``max_chars`` characters.
    """
    if d.passed:
        raise ValueError("cannot format feedback for a passing check")
    msgs = d.messages if max_messages is None else d.messages[:max_messages]
    lines = []
    used = 0
    for m in msgs:
        text = m.text.replace("\r\n", " ").replace("\n", " ")
        line = (f"Error on line {m.line}, start column {m.start_col}, "
                f"end column {m.end_col}: {text}")
        if max_chars is not None:
            extra = len(line) + (1 if lines else 0)
            if used + extra > max_chars:
                if not lines:
                    lines.append(line[:max_chars])
                break
            used += extra
        lines.append(line)
    return "\n".join(lines)


def fvr_feedback(d: ProverDiagnostics) -> str:
    """Feedback with the bounded size used for repair prompts."""
    return format_error_feedback(d, MAX_FEEDBACK_MESSAGES, MAX_FEEDBACK_CHARS)


def find_placeholders(body: str, blocklist: Sequence[str]) -> list[DiagnosticMessage]:
    out = []
    for word in blocklist:
        pattern = re.compile(rf"(?<![\w.']){re.escape(word)}(?![\w'])")
        for lineno, text in enumerate(body.split("\n"), start=1):
            code = text.split("--", 1)[0]
            for m in pattern.finditer(code):
                out.append(DiagnosticMessage(
                    lineno, m.start(), m.end(),
                    f"declaration uses '{word}' placeholder; a full proof is required",
                ))
    out.sort(key=lambda m: (m.line, m.start_col))
    return out


class ProverGate:
    """Computes the binary FV score for a body.

    FV is 1 only when the checker accepts the body and no blocklisted
    placeholder token appears in it. ``max_parallel`` caps concurrent
    checker invocations across threads.
    """

    def __init__(
        self,
        backend: ProverBackend,
        *,
        timeout: float = DEFAULT_TIMEOUT,
        blocklist: Sequence[str] = DEFAULT_BLOCKLIST,
        max_parallel: int = 4,
    ):
        self.backend = backend
        self.timeout = timeout
        self.blocklist = tuple(blocklist)
        self._slots = threading.BoundedSemaphore(max(1, max_parallel))

    def check_validity(self, body: str) -> tuple[int, ProverDiagnostics]:
        if not body or not body.strip():
            raise ValueError("cannot check an empty formalization")
        with self._slots:
            diag = self.backend.run(body, self.timeout)
        placeholders = find_placeholders(body, self.blocklist)
        if placeholders:
            messages = diag.messages + tuple(placeholders)
            diag = ProverDiagnostics(False, messages, diag.elapsed, diag.timed_out)
        return (1 if diag.passed else 0), diag


_TEXT_DIAG = re.compile(r"^(?P<path>.*?):(?P<line>\d+):(?P<col>\d+):\s*error:\s?(?P<msg>.*)$")
_OTHER_DIAG = re.compile(r"^(?P<path>.*?):(?P<line>\d+):(?P<col>\d+):\s*(warning|info|information):")


def parse_text_diagnostics(output: str) -> list[DiagnosticMessage]:
    """Parse ``<path>:<line>:<col>: error: <msg>`` lines.

    Indented or unprefixed lines following an error are continuation lines
    and are appended to its message.
    """
    msgs: list[DiagnosticMessage] = []
    current: dict | None = None
    for raw in output.splitlines():
        m = _TEXT_DIAG.match(raw)
        if m:
            if current:
                msgs.append(DiagnosticMessage(**current))
            current = {"line": int(m["line"]), "start_col": int(m["col"]),
                       "end_col": None, "text": m["msg"].strip()}
        elif _OTHER_DIAG.match(raw):
            if current:
                msgs.append(DiagnosticMessage(**current))
            current = None
        elif current is not None and raw.strip():
            current["text"] = f"{current['text']} {raw.strip()}".strip()
    if current:
        msgs.append(DiagnosticMessage(**current))
    return msgs


def parse_jsonl_diagnostics(output: str) -> list[DiagnosticMessage]:
    """Parse JSON-lines diagnostics.

    Accepts the REPL-style shape ``{"severity", "pos": {"line", "column"},
    "endPos": {...} | null, "data"}`` and a flat ``{"line", "column",
    "end_column", "message"}`` shape. Non-error severities are skipped.
    """
    msgs = []
    for raw in output.split("\n"):
        raw = raw.strip()
        if not raw.startswith("{"):
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError:
            continue
        if obj.get("severity", "error") != "error":
            continue
        if "pos" in obj:
            end = obj.get("endPos") or {}
            msgs.append(DiagnosticMessage(
                int(obj["pos"]["line"]), int(obj["pos"]["column"]),
                end.get("column"), str(obj.get("data", ""))))
        elif "line" in obj:
            msgs.append(DiagnosticMessage(
                int(obj["line"]), int(obj.get("column", 0)),
                obj.get("end_column"), str(obj.get("message", ""))))
    return msgs


class CommandProver:
    """Runs an external checker command on a temporary file.

    ``command`` is a template containing ``{file}``; exit status 0 means the
    body was accepted. ``diagnostic_format`` is ``"text"`` or ``"jsonl"``.
    """

    def __init__(
        self,
        command: str | Sequence[str],
        *,
        diagnostic_format: str = "text",
        suffix: str = ".lean",
        cwd: str | None = None,
    ):
        if diagnostic_format not in ("text", "jsonl"):
            raise ValueError(f"unknown diagnostic format {diagnostic_format!r}")
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        if not any("{file}" in part for part in self.command):
            raise ValueError("command template must contain a {file} placeholder")
        self.diagnostic_format = diagnostic_format
        self.suffix = suffix
        self.cwd = cwd

    def run(self, body: str, timeout: float) -> ProverDiagnostics:
        with tempfile.TemporaryDirectory(prefix="monorefine-") as tmp:
            path = Path(tmp) / f"Candidate{self.suffix}"
            path.write_text(body, encoding="utf-8")
            argv = [part.replace("{file}", str(path)) for part in self.command]
            start = time.monotonic()
            try:
                proc = subprocess.run(
                    argv, capture_output=True, text=True, timeout=timeout, cwd=self.cwd,
                )
            except subprocess.TimeoutExpired:
                elapsed = time.monotonic() - start
                msg = DiagnosticMessage(1, 0, None, f"checker timed out after {timeout:g}s")
                return ProverDiagnostics(False, (msg,), elapsed, timed_out=True)
            except OSError as exc:
                raise ProverUnavailable(f"cannot run checker {argv[0]!r}: {exc}") from exc
            elapsed = time.monotonic() - start
        if proc.returncode == 0:
            return ProverDiagnostics(True, (), elapsed)
        output = proc.stdout + "\n" + proc.stderr
        if self.diagnostic_format == "jsonl":
            msgs = parse_jsonl_diagnostics(output)
        else:
            msgs = parse_text_diagnostics(output)
        if not msgs:
            tail = " ".join(output.split())[-500:]
            msgs = [DiagnosticMessage(1, 0, None,
                                      f"checker exited with status {proc.returncode}: {tail}")]
        return ProverDiagnostics(False, tuple(msgs), elapsed)


@dataclass
class MockProver:
    """Table-driven checker for tests and simulations.

    ``table`` maps body fingerprints to either True (pass) or a list of
    diagnostic messages (fail). Unknown bodies pass iff ``default_pass``.
    """

    table: dict[str, bool | list[DiagnosticMessage]] = field(default_factory=dict)
    default_pass: bool = True
    calls: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._lock = threading.Lock()

    def add(self, body: str, result: bool | Iterable[DiagnosticMessage]) -> None:
        self.table[fingerprint(body)] = result if isinstance(result, bool) else list(result)

    @classmethod
    def from_dict(cls, data: Mapping) -> MockProver:
        table: dict[str, bool | list[DiagnosticMessage]] = {}
        for fp, entry in data.get("table", {}).items():
            if isinstance(entry, bool):
                table[fp] = entry
            else:
                table[fp] = [DiagnosticMessage(m["line"], m["start_col"], m.get("end_col"), m["text"])
                             for m in entry]
        return cls(table, bool(data.get("default_pass", True)))

    def run(self, body: str, timeout: float) -> ProverDiagnostics:
        with self._lock:
            self.calls.append(body)
        entry = self.table.get(fingerprint(body), self.default_pass)
        if entry is True:
            return ProverDiagnostics(True)
        if entry is False or not entry:
            return ProverDiagnostics(False, (DiagnosticMessage(1, 0, None, "rejected by mock checker"),))
        return ProverDiagnostics(False, tuple(entry))
