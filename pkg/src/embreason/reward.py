"""Response parsing and rule-based rewards.

A well-formed response is exactly one ``<think>...</think>`` block followed by
one ``<answer>...</answer>`` block, with only whitespace around them.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .demo_model import Position3

_TAGS = ("<think>", "</think>", "<answer>", "</answer>")
_GRAMMAR = re.compile(r"\s*<think>(.*?)</think>\s*<answer>(.*?)</answer>\s*", re.DOTALL)
_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
# a vector, optionally followed by a "# comment" on the same line
_VECTOR = re.compile(rf"\[\s*({_NUM})\s*,\s*({_NUM})\s*,\s*({_NUM})\s*\][ \t]*(?:#[^\n]*)?")


@dataclass(frozen=True)
class ParsedResponse:
    think: str
    answer: str
    valid_format: bool


@dataclass(frozen=True)
class RewardBreakdown:
    r_format: float
    r_answer: float
    total: float


def parse_response(text: str) -> ParsedResponse:
    if any(text.count(tag) != 1 for tag in _TAGS):
        return ParsedResponse("", "", False)
    m = _GRAMMAR.fullmatch(text)
    if m is None:
        return ParsedResponse("", "", False)
    return ParsedResponse(m.group(1).strip(), m.group(2).strip(), True)


def format_reward(parsed: ParsedResponse, weight: float = 1.0) -> float:
    return weight if parsed.valid_format else 0.0


def extract_choice(answer: str) -> str | None:
    """Option letter from ``[[X]]`` or a bare ``X``; case-sensitive."""
    a = answer.strip()
    m = re.fullmatch(r"\[\[([A-D])\]\]|([A-D])", a)
    if m is None:
        return None
    return m.group(1) or m.group(2)


def mcqa_answer_reward(parsed: ParsedResponse, answer_letter: str, weight: float = 1.0) -> float:
    # correct letters inside malformed responses earn nothing
    if not parsed.valid_format:
        return 0.0
    return weight if extract_choice(parsed.answer) == answer_letter else 0.0


def parse_vector_answer(answer: str) -> Position3 | None:
    m = _VECTOR.fullmatch(answer.strip())
    if m is None:
        return None
    try:
        return Position3.of(float(g) for g in m.groups())
    except ValueError:
        return None


def l1_distance(a: Position3, b: Position3) -> float:
    return sum(abs(u - v) for u, v in zip(a, b))


def open_ended_reward(parsed: ParsedResponse, truth: Position3) -> float:
    """clip(1 - L1(pred, truth), 0, 1); zero when the answer cannot be parsed."""
    if not parsed.valid_format:
        return 0.0
    pred = parse_vector_answer(parsed.answer)
    if pred is None:
        return 0.0
    return min(1.0, max(0.0, 1.0 - l1_distance(pred, truth)))


def composite_reward(r_f: float, r_a: float) -> RewardBreakdown:
    return RewardBreakdown(r_f, r_a, r_f + r_a)


def score_mcqa(text: str, answer_letter: str, w_format: float = 1.0, w_answer: float = 1.0) -> RewardBreakdown:
    parsed = parse_response(text)
    return composite_reward(format_reward(parsed, w_format), mcqa_answer_reward(parsed, answer_letter, w_answer))


def score_open_ended(text: str, truth: Position3, w_format: float = 1.0) -> RewardBreakdown:
    parsed = parse_response(text)
    return composite_reward(format_reward(parsed, w_format), open_ended_reward(parsed, truth))
