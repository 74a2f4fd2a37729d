"""Open-ended embodied-reasoning bench: sampling, LLM judging and reporting.

Answers are sampled at temperature 0 under a per-type system prompt, scored
0-3 by a judge model against a reference answer, and averaged per reasoning
type and split. Judge quality is checked by Pearson correlation against the
median of human annotator scores.
"""

from __future__ import annotations

import csv
import enum
import re
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import ConstantInput, MalformedRecord, ScoreOutOfRange, UnparseableVerdict
from .gen_backend import Backend, GenRequest, GenResponse, generate_batch
from .jsonl import iter_jsonl
from .qa_gen import derive_seed
from .reward import parse_response


class ReasoningType(str, enum.Enum):
    PLANNING = "planning"
    HIGH_LEVEL_ACTION = "high_level_action"
    MOVEMENT = "movement"
    SPATIAL = "spatial"

    @classmethod
    def parse(cls, s: "str | ReasoningType") -> "ReasoningType":
        if isinstance(s, cls):
            return s
        return cls(re.sub(r"[\s\-]+", "_", str(s).strip().lower()))


class Split(str, enum.Enum):
    IN = "in"
    OUT = "out"

    @classmethod
    def parse(cls, s: "str | Split") -> "Split":
        if isinstance(s, cls):
            return s
        v = str(s).strip().lower()
        return cls({"in_dist": "in", "out_dist": "out"}.get(v, v))


# Table layouts: low-level types are reported per split, high-level ones as a single score.
LOW_LEVEL_TYPES = (ReasoningType.MOVEMENT, ReasoningType.SPATIAL)
HIGH_LEVEL_TYPES = (ReasoningType.PLANNING, ReasoningType.HIGH_LEVEL_ACTION)
TYPE_ORDER = (ReasoningType.PLANNING, ReasoningType.HIGH_LEVEL_ACTION, ReasoningType.MOVEMENT, ReasoningType.SPATIAL)


# ---------------------------------------------------------------- sampling prompt

SAMPLING_SYSTEM_TEMPLATE = """\
You are an AI that accurately answers questions about robot actions and spatial relationships. Follow these rules strictly:
1. Answer ONLY what is asked in the question.
2. Do not include any purpose or objective of actions (remove all 'to...' phrases).
3. Do not include any additional descriptive information.
4. Keep answers concise and focused on the core information.
5. Remove all unnecessary details about the current state or conditions.
6. Direction should be judged based on the viewpoint in the image.
   * up: away from the ground
   * down: toward the ground
   * forward: toward the camera (where the image was taken from)
   * backward: away from the camera
   * right: to the right side from the camera's perspective
   * left: to the left side from the camera's perspective

TASK GUIDELINES:
{task_description}

Additional Style Requirements:
- Use simple and clear English.
- Focus on semantic correctness, not stylistic variation.
- Keep sentences short and remove unnecessary details.
- If multiple directions are involved, combine them clearly (e.g., 'Move down and slightly right')."""

TASK_GUIDELINES = {
    ReasoningType.SPATIAL: (
        "- Focus only on relative positions and spatial relationships between objects.\n"
        "- Do not describe any action or movement.\n"
        "- Only describe the current spatial configuration.\n"
        '- Example Answer: "The gripper is above the cup, offset to the right."'
    ),
    ReasoningType.PLANNING: (
        "- List major actions in chronological order (1., 2., 3., ...).\n"
        "- Each step should describe only the action, without mentioning the purpose.\n"
        '- Example Answer: "1. Move the robot arm above the cup. 2. Lower the gripper to grasp the cup. '
        '3. Lift the cup upward."'
    ),
    ReasoningType.HIGH_LEVEL_ACTION: (
        "- Focus on the immediate next meaningful subtask (a single self-contained action).\n"
        "- Describe WHAT needs to be done, not HOW to do it.\n"
        "- Only the immediate next step, not the final goal.\n"
        '- Example Answer: "Move the gripper closer to the button."'
    ),
    ReasoningType.MOVEMENT: (
        "- Specify only mechanical movements and gripper state changes.\n"
        "- Use the robot's perspective for directions:\n"
        "- Describe only the very next physical movement.\n"
        '- Example Answer: "Move down and slightly right."'
    ),
}


def assemble_system_prompt(reasoning_type: "str | ReasoningType") -> str:
    rt = ReasoningType.parse(reasoning_type)
    return SAMPLING_SYSTEM_TEMPLATE.format(task_description=TASK_GUIDELINES[rt])


# ---------------------------------------------------------------- judge prompt

RUBRIC = """\
0 points: Meaning completely different from ground truth
- Answer has a completely different meaning from ground truth
- Key concepts and ideas are misinterpreted
- Contains information that contradicts ground truth

1 point: Partially matches but with significant meaning differences
- Some key points match but main meaning is different
- Contains significant misunderstandings of core concepts
- Has some correct information but overall meaning is incorrect

2 points: Mostly matches in meaning but with minor differences
- Main meaning and key points are correct
- Minor details or expressions are different
- Overall context and intent are preserved

3 points: Meaning is equivalent to or more detailed than ground truth
- Any expression that conveys the same basic meaning as ground truth
- Any description that leads to the same functional outcome
- Any expression that maintains the same spatial relationship between objects
- Any description that achieves the same goal through equivalent means
- Any expression that preserves the core meaning while using different words
- Any description that maintains the same context and intent
- Any expression that describes the same target location and action

Additional Notes:
1. Focus on semantic equivalence rather than exact wording
2. Different expressions are acceptable if they convey the same meaning
3. Consider the overall context and intent of the answer
4. Minor differences in expression are acceptable if the core meaning is maintained
5. Paraphrasing is considered a perfect match if the meaning is preserved
6. Different ways of describing the same action (e.g., 'press' vs 'flip' a switch) should be considered equivalent
7. The specific actor (robot vs human) should not affect the score if the action described is functionally equivalent
8. Different ways of expressing the same spatial relationship (e.g., 'over' vs 'toward') should be considered equivalent
9. Focus on whether the answer achieves the same functional outcome as the ground truth
10. Consider the answer as a 3 if it describes the same action or state using different but equivalent words"""

JUDGE_SYSTEM_PROMPT = (
    "You are an expert in evaluating the consistency between model's answer and ground truth answer. "
    "Please assign a score between 0-3 based on the given rubric and explain the reason in detail. "
    "You must respond in the format 'Score: [0-3] Reason: [explanation]' in a single line. "
    "You may use line breaks, but Score and Reason must be clearly separated and identifiable."
)

JUDGE_USER_TEMPLATE = """\
Please evaluate how well the model's answer matches the ground truth answer.
Evaluation Criteria:
{rubric}
Question: {question}
Model's Answer: {model_answer}
Ground Truth Answer: {ground_truth}
Please assign a score between 0-3 and explain the reason in detail."""


def assemble_judge_prompt(question: str, model_answer: str, reference_answer: str) -> tuple[str, str]:
    user = JUDGE_USER_TEMPLATE.format(
        rubric=RUBRIC, question=question, model_answer=model_answer, ground_truth=reference_answer
    )
    return JUDGE_SYSTEM_PROMPT, user


# ---------------------------------------------------------------- verdicts

@dataclass(frozen=True)
class JudgeVerdict:
    score: int
    reason: str

    def __post_init__(self):
        if not 0 <= self.score <= 3:
            raise ScoreOutOfRange(f"score {self.score} outside [0, 3]")

    def render(self) -> str:
        return f"Score: {self.score} Reason: {self.reason}"


_SCORE = re.compile(r"\**\s*score\s*\**\s*[:=]\s*\**\s*\[?\s*([-+]?\d+(?:\.\d+)?)\s*\]?", re.IGNORECASE)
# a closing "**" right after the colon belongs to the label, not the reason
_REASON = re.compile(r"\**\s*reason\s*\**\s*:(?:\*\*(?=\s|$))?", re.IGNORECASE)


def parse_verdict(text: str) -> JudgeVerdict:
    """First ``Score:`` integer plus the ``Reason:`` text after it.

    Line breaks and markdown emphasis around the labels are tolerated.
    """
    m = _SCORE.search(text)
    if m is None:
        raise UnparseableVerdict(f"no score in verdict: {text[:120]!r}")
    raw = m.group(1)
    if "." in raw:
        raise UnparseableVerdict(f"non-integer score {raw!r}")
    score = int(raw)
    r = _REASON.search(text, m.end())
    if r is None:
        raise UnparseableVerdict(f"no reason in verdict: {text[:120]!r}")
    if not 0 <= score <= 3:
        raise ScoreOutOfRange(f"score {score} outside [0, 3]")
    return JudgeVerdict(score, text[r.end():].strip())


# ---------------------------------------------------------------- questions / answers

@dataclass(frozen=True)
class BenchQuestion:
    id: str
    task_id: str
    reasoning_type: ReasoningType
    split: Split
    image_ref: str
    question: str
    reference_answer: str

    def __post_init__(self):
        for name in ("id", "task_id", "image_ref", "question", "reference_answer"):
            if not getattr(self, name):
                raise ValueError(f"{name} must be non-empty")

    @classmethod
    def from_json(cls, d: Mapping) -> "BenchQuestion":
        return cls(
            id=str(d["id"]),
            task_id=str(d["task"]),
            reasoning_type=ReasoningType.parse(d["type"]),
            split=Split.parse(d["split"]),
            image_ref=str(d["image"]),
            question=str(d["question"]),
            reference_answer=str(d["reference"]),
        )

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "task": self.task_id,
            "type": self.reasoning_type.value,
            "split": self.split.value,
            "image": self.image_ref,
            "question": self.question,
            "reference": self.reference_answer,
        }


def load_question_bank(path: Path | str) -> list[BenchQuestion]:
    out: list[BenchQuestion] = []
    seen: set[str] = set()
    for lineno, rec in iter_jsonl(path):
        try:
            q = BenchQuestion.from_json(rec)
        except KeyError as e:
            raise MalformedRecord(f"missing key {e.args[0]!r}", lineno, str(path)) from None
        except ValueError as e:
            raise MalformedRecord(str(e), lineno, str(path)) from None
        if q.id in seen:
            raise MalformedRecord(f"duplicate question id {q.id!r}", lineno, str(path))
        seen.add(q.id)
        out.append(q)
    return out


@dataclass(frozen=True)
class SampledAnswer:
    question_id: str
    raw_text: str
    extracted_answer: str
    error: str | None = None

    @property
    def answered(self) -> bool:
        return self.error is None

    def to_json(self) -> dict:
        return {"id": self.question_id, "raw": self.raw_text, "answer": self.extracted_answer, "error": self.error}

    @classmethod
    def from_json(cls, d: Mapping) -> "SampledAnswer":
        return cls(str(d["id"]), d.get("raw") or "", d.get("answer") or "", d.get("error"))


def extract_answer(raw: str) -> str:
    parsed = parse_response(raw)
    return parsed.answer if parsed.valid_format else raw


def _error_text(e: BaseException) -> str:
    return f"{type(e).__name__}: {e}"


def sample_answers(
    backend: Backend,
    questions: Sequence[BenchQuestion],
    *,
    model: str = "policy",
    temperature: float = 0.0,
    max_tokens: int = 1024,
    max_in_flight: int = 4,
) -> list[SampledAnswer]:
    requests = [
        GenRequest(
            model=model,
            system_prompt=assemble_system_prompt(q.reasoning_type),
            user_text=q.question,
            image_ref=q.image_ref,
            temperature=temperature,
            max_tokens=max_tokens,
        )
        for q in questions
    ]
    out = []
    for q, res in zip(questions, generate_batch(backend, requests, max_in_flight)):
        if isinstance(res, GenResponse):
            out.append(SampledAnswer(q.id, res.text, extract_answer(res.text)))
        else:
            out.append(SampledAnswer(q.id, "", "", _error_text(res)))
    return out


# ---------------------------------------------------------------- judging

UNANSWERED = "unanswered"


@dataclass(frozen=True)
class VerdictRecord:
    question_id: str
    model_answer: str
    verdict: JudgeVerdict
    judge_raw: str
    error: str | None = None

    @property
    def score(self) -> int:
        return self.verdict.score

    def to_json(self) -> dict:
        d = {
            "id": self.question_id,
            "model_answer": self.model_answer,
            "score": self.verdict.score,
            "reason": self.verdict.reason,
            "judge_raw": self.judge_raw,
        }
        if self.error is not None:
            d["error"] = self.error
        return d

    @classmethod
    def from_json(cls, d: Mapping) -> "VerdictRecord":
        return cls(str(d["id"]), d.get("model_answer", ""), JudgeVerdict(int(d["score"]), d.get("reason", "")),
                   d.get("judge_raw", ""), d.get("error"))


def _judge_request(q: BenchQuestion, answer: str, model: str, temperature: float, seed: int) -> GenRequest:
    system, user = assemble_judge_prompt(q.question, answer, q.reference_answer)
    return GenRequest(model=model, system_prompt=system, user_text=user, temperature=temperature, seed=seed)


def judge(
    backend: Backend,
    answers: Sequence[SampledAnswer],
    questions: Sequence[BenchQuestion],
    *,
    model: str = "judge",
    temperature: float = 1.0,
    seed: int = 0,
    max_in_flight: int = 4,
) -> list[VerdictRecord]:
    """One record per question. Unanswered questions and judge failures score 0.

    An unparseable verdict is retried once with the next seed before the
    failure is recorded.
    """
    if len(answers) != len(questions):
        raise ValueError("answers and questions must be aligned")
    for a, q in zip(answers, questions):
        if a.question_id != q.id:
            raise ValueError(f"answer {a.question_id!r} does not match question {q.id!r}")

    records: list[VerdictRecord | None] = [None] * len(questions)
    pending = []
    for i, (a, q) in enumerate(zip(answers, questions)):
        if a.answered:
            pending.append(i)
        else:
            records[i] = VerdictRecord(q.id, "", JudgeVerdict(0, UNANSWERED), "", a.error)

    def run(idx: list[int], attempt: int) -> list[int]:
        reqs = [
            _judge_request(questions[i], answers[i].extracted_answer, model, temperature,
                           derive_seed(seed, questions[i].id) + attempt)
            for i in idx
        ]
        retry = []
        for i, res in zip(idx, generate_batch(backend, reqs, max_in_flight)):
            ans = answers[i].extracted_answer
            if not isinstance(res, GenResponse):
                records[i] = VerdictRecord(questions[i].id, ans, JudgeVerdict(0, "judge error"), "", _error_text(res))
                continue
            try:
                records[i] = VerdictRecord(questions[i].id, ans, parse_verdict(res.text), res.text)
            except (UnparseableVerdict, ScoreOutOfRange) as e:
                records[i] = VerdictRecord(questions[i].id, ans, JudgeVerdict(0, "unparseable verdict"), res.text,
                                           _error_text(e))
                retry.append(i)
        return retry

    failed = run(pending, 0)
    if failed:
        run(failed, 1)
    return [r for r in records if r is not None]


# ---------------------------------------------------------------- aggregation

@dataclass(frozen=True)
class Cell:
    count: int
    total: int = 0

    @property
    def mean(self) -> float | None:
        return self.total / self.count if self.count else None


@dataclass
class BenchReport:
    cells: dict[tuple[ReasoningType, Split], Cell] = field(default_factory=dict)
    per_type: dict[ReasoningType, Cell] = field(default_factory=dict)
    per_split: dict[Split, Cell] = field(default_factory=dict)
    overall: Cell = Cell(0)

    def mean(self, rt: "str | ReasoningType", split: "str | Split | None" = None) -> float | None:
        rt = ReasoningType.parse(rt)
        if split is None:
            return self.per_type[rt].mean
        return self.cells[(rt, Split.parse(split))].mean

    def count(self, rt: "str | ReasoningType", split: "str | Split | None" = None) -> int:
        rt = ReasoningType.parse(rt)
        if split is None:
            return self.per_type[rt].count
        return self.cells[(rt, Split.parse(split))].count


def aggregate(questions: Sequence[BenchQuestion], records: Sequence[VerdictRecord]) -> BenchReport:
    """Question-weighted means per type x split; a type's Avg pools both splits."""
    by_id = {r.question_id: r for r in records}
    counts: dict = {}
    for q in questions:
        r = by_id.get(q.id)
        if r is None:
            continue
        for key in ((q.reasoning_type, q.split), q.reasoning_type, q.split, None):
            n, t = counts.get(key, (0, 0))
            counts[key] = (n + 1, t + r.score)  # integer sums keep the means order-independent

    def cell(key):
        return Cell(*counts.get(key, (0, 0)))

    return BenchReport(
        cells={(rt, sp): cell((rt, sp)) for rt in TYPE_ORDER for sp in Split},
        per_type={rt: cell(rt) for rt in TYPE_ORDER},
        per_split={sp: cell(sp) for sp in Split},
        overall=cell(None),
    )


def _fmt(v: float | None) -> str:
    return "" if v is None else f"{v:.2f}"


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence], comment: str | None) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def write_report(report: BenchReport, out_dir: Path | str, model: str = "model", comment: str | None = None) -> dict:
    """Writes the split table (movement/spatial In, Out, Avg), the high-level
    table (planning / high-level action) and a long table with counts."""
    out_dir = Path(out_dir)
    split_header = ["model"] + [f"{rt.value}_{c}" for rt in LOW_LEVEL_TYPES for c in ("in", "out", "avg")]
    split_row = [model]
    for rt in LOW_LEVEL_TYPES:
        split_row += [_fmt(report.mean(rt, Split.IN)), _fmt(report.mean(rt, Split.OUT)), _fmt(report.mean(rt))]
    paths = {
        "split": _write_csv(out_dir / "report_split.csv", split_header, [split_row], comment),
        "high_level": _write_csv(
            out_dir / "report_high_level.csv",
            ["model"] + [rt.value for rt in HIGH_LEVEL_TYPES],
            [[model] + [_fmt(report.mean(rt)) for rt in HIGH_LEVEL_TYPES]],
            comment,
        ),
    }
    long_rows = []
    for rt in TYPE_ORDER:
        for sp in Split:
            c = report.cells[(rt, sp)]
            long_rows.append([rt.value, sp.value, c.count, _fmt(c.mean)])
        c = report.per_type[rt]
        long_rows.append([rt.value, "avg", c.count, _fmt(c.mean)])
    long_rows.append(["overall", "avg", report.overall.count, _fmt(report.overall.mean)])
    paths["cells"] = _write_csv(out_dir / "report_cells.csv", ["type", "split", "count", "mean"], long_rows, comment)
    return paths


# ---------------------------------------------------------------- judge validation

def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Sample Pearson correlation."""
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise ValueError("need at least two points")
    if len(set(x)) < 2 or len(set(y)) < 2:
        raise ConstantInput("correlation undefined for constant input")
    r = statistics.correlation([float(v) for v in x], [float(v) for v in y])
    return max(-1.0, min(1.0, r))


def human_score(annotations: Sequence[float]) -> float:
    """Median across annotators; an even count averages the middle pair."""
    if not annotations:
        raise ValueError("no annotator scores")
    return float(statistics.median(annotations))


@dataclass(frozen=True)
class JudgeValidation:
    correlations: dict[ReasoningType, float | None]  # None: undefined
    counts: dict[ReasoningType, int]


def validate_judge(
    human_scores: Sequence[Sequence[float]],
    llm_scores: Sequence[float],
    types: Sequence["str | ReasoningType"],
) -> JudgeValidation:
    if not len(human_scores) == len(llm_scores) == len(types):
        raise ValueError("human scores, llm scores and types must be aligned")
    grouped: dict[ReasoningType, tuple[list, list]] = {}
    for h, s, t in zip(human_scores, llm_scores, types):
        hs, ls = grouped.setdefault(ReasoningType.parse(t), ([], []))
        hs.append(human_score(h))
        ls.append(float(s))
    corr: dict[ReasoningType, float | None] = {}
    for rt in TYPE_ORDER:
        if rt not in grouped:
            continue
        hs, ls = grouped[rt]
        try:
            corr[rt] = pearson(hs, ls)
        except (ConstantInput, ValueError):
            corr[rt] = None
    return JudgeValidation(corr, {rt: len(grouped[rt][0]) for rt in corr})


def write_correlations(v: JudgeValidation, path: Path | str, comment: str | None = None) -> Path:
    """One row of per-type correlations, columns in bench type order."""
    header = [""] + [rt.value for rt in TYPE_ORDER]
    row = ["pearson_correlation"]
    for rt in TYPE_ORDER:
        if rt not in v.correlations:
            row.append("")
        elif v.correlations[rt] is None:
            row.append("undefined")
        else:
            row.append(f"{v.correlations[rt]:.4f}")
    counts = ["n"] + [str(v.counts.get(rt, 0)) for rt in TYPE_ORDER]
    return _write_csv(Path(path), header, [row, counts], comment)
