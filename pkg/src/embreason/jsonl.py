"""JSON Lines reading and writing.

Output files may start with a header record ``{"_header": {...}}`` carrying
provenance (config hash, seed). Readers skip it.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .errors import MalformedRecord, MissingFile


def write_jsonl(records: Iterable[Mapping], path: Path | str, header: Mapping | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(json.dumps({"_header": dict(header)}, ensure_ascii=False) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    return path


def iter_jsonl(path: Path | str) -> Iterator[tuple[int, dict]]:
    """(line number, record) pairs; blank lines and header records are skipped."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"invalid JSON ({exc.msg})", lineno, str(path)) from None
            if not isinstance(rec, dict):
                raise MalformedRecord("expected a JSON object", lineno, str(path))
            if "_header" in rec:
                continue
            yield lineno, rec


def read_jsonl(path: Path | str) -> list[dict]:
    return [rec for _, rec in iter_jsonl(path)]


def read_header(path: Path | str) -> dict | None:
    with Path(path).open(encoding="utf-8") as fh:
        first = fh.readline()
    try:
        rec = json.loads(first)
    except json.JSONDecodeError:
        return None
    return rec.get("_header") if isinstance(rec, dict) else None
