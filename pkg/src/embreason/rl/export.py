"""Fill advantages into rollout exchange files produced by external trainers.

One JSON object per line::

    {"query_id": str, "rewards": [G], "logprob_old": [G], "logprob_ref": [G],
     "logprob_cur": [G], "advantage": [G] | null}
"""

from __future__ import annotations

import math
from pathlib import Path

from ..errors import MalformedRecord
from ..jsonl import iter_jsonl, write_jsonl
from .advantages import compute_advantages
from .config import Algorithm

_ARRAYS = ("rewards", "logprob_old", "logprob_ref", "logprob_cur")


def _check_record(rec: dict, group_size: int, lineno: int, path: str) -> None:
    if not isinstance(rec.get("query_id"), str):
        raise MalformedRecord("'query_id' must be a string", lineno, path)
    for key in _ARRAYS:
        arr = rec.get(key)
        if not isinstance(arr, list):
            raise MalformedRecord(f"{key!r} must be a list", lineno, path)
        if len(arr) != group_size:
            raise MalformedRecord(f"{key!r} has {len(arr)} entries, expected group size {group_size}", lineno, path)
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) for v in arr):
            raise MalformedRecord(f"{key!r} must hold finite numbers", lineno, path)


def load_rollouts(path: Path | str, group_size: int) -> list[dict]:
    records = []
    for lineno, rec in iter_jsonl(path):
        _check_record(rec, group_size, lineno, str(path))
        records.append(rec)
    return records


def export_advantages(
    rollouts_file: Path | str,
    out_file: Path | str,
    algorithm: Algorithm | str = Algorithm.GRPO,
    group_size: int = 5,
    eps: float = 1e-8,
    header: dict | None = None,
) -> list[dict]:
    """Write the rollouts back with ``advantage`` filled; returns the records.

    For REINFORCE++ the whole file is one normalisation batch.
    """
    records = load_rollouts(rollouts_file, group_size)
    advs = compute_advantages([r["rewards"] for r in records], algorithm, eps) if records else []
    out = []
    for rec, a in zip(records, advs):
        rec = dict(rec)
        rec["advantage"] = [float(v) for v in a]
        out.append(rec)
    write_jsonl(out, out_file, header)
    return out
