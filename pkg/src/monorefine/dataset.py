"""JSON-lines datasets of natural-language theorems.

Each line is an object with ``id``, ``nl_statement``, ``nl_proof`` and an
optional ``split`` tag. Any problem aborts the load; errors carry line
numbers.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

from .model import NLTheorem

REQUIRED_KEYS = ("id", "nl_statement", "nl_proof")


class DatasetError(ValueError):
    pass


def parse_dataset(lines: Iterable[str], *, allow_empty_proof: bool = False, source: str = "<dataset>") -> list[NLTheorem]:
    theorems: list[NLTheorem] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{source}:{lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(obj, dict):
            raise DatasetError(f"{source}:{lineno}: expected a JSON object")
        missing = [k for k in REQUIRED_KEYS if k not in obj]
        if missing:
            raise DatasetError(f"{source}:{lineno}: missing keys {', '.join(missing)}")
        if not all(isinstance(obj[k], str) for k in REQUIRED_KEYS):
            raise DatasetError(f"{source}:{lineno}: id, nl_statement and nl_proof must be strings")
        tid = obj["id"]
        if tid in seen:
            raise DatasetError(f"{source}:{lineno}: duplicate id {tid!r} (first seen on line {seen[tid]})")
        seen[tid] = lineno
        try:
            theorems.append(NLTheorem(tid, obj["nl_statement"], obj["nl_proof"],
                                      obj.get("split"), allow_empty_proof))
        except ValueError as exc:
            raise DatasetError(f"{source}:{lineno}: {exc}") from exc
    return theorems


def load_dataset(path: str | Path, *, allow_empty_proof: bool = False) -> list[NLTheorem]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DatasetError(f"cannot read dataset {path}: {exc}") from exc
    # only "\n" ends a record; str.splitlines would also break on U+0085 and U+2028 inside strings
    return parse_dataset(text.split("\n"), allow_empty_proof=allow_empty_proof, source=str(path))


def dump_dataset(theorems: Iterable[NLTheorem]) -> str:
    out = []
    for t in theorems:
        obj = {"id": t.id, "nl_statement": t.nl_statement, "nl_proof": t.nl_proof}
        if t.source_tag is not None:
            obj["split"] = t.source_tag
        out.append(json.dumps(obj, ensure_ascii=False))
    return "".join(line + "\n" for line in out)


def save_dataset(path: str | Path, theorems: Iterable[NLTheorem]) -> None:
    Path(path).write_text(dump_dataset(theorems), encoding="utf-8")
