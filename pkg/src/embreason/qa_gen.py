"""Turn keypointed demonstrations into MCQA and SFT datasets.

Three MCQA question types are produced per sampled frame ``t``: predict the
next keypoint position, identify the current position, and pick the movement
that leads from the current position to the next keypoint. Each question has
the truth plus three sampled distractors, shuffled.

Everything is a pure function of the inputs and ``GenConfig.seed``. Per-item
random streams are derived from (seed, item id) so generation order does not
affect output bytes.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .demo_model import Box3, Demonstration, EnvironmentMetadata, Position3, workspace_bounds
from .errors import MissingAnnotation, SamplingExhausted, TemplateFieldMissing
from .keypoints import next_keypoint
from .templates import (
    OPTION_LETTERS,
    format_state,
    parse_state,
    render_movement_prompt,
    render_state_prompt,
    render_state_sft_prompt,
    render_waypoint_prompt,
    render_waypoint_sft_prompt,
)

# |delta| at or below this is treated as no motion along the axis
MOVEMENT_DEAD_ZONE = 1e-4
MAX_REJECTIONS = 1000
DEFAULT_DIRECTION_WORDS = (("forward", "backward"), ("right", "left"), ("up", "down"))
NO_MOVEMENT = "no movement"

_COMMAND = re.compile(r"^(slightly )?move \S+$")


class QAType(str, Enum):
    WAYPOINT = "waypoint"
    STATE = "state"
    MOVEMENT = "movement"


@dataclass(frozen=True)
class MovementLabel:
    commands: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.commands) > 3 or len(set(self.commands)) != len(self.commands):
            raise ValueError(f"at most one command per axis: {self.commands}")
        for c in self.commands:
            if not _COMMAND.match(c):
                raise ValueError(f"bad movement command {c!r}")

    def render(self) -> str:
        return ", ".join(self.commands) if self.commands else NO_MOVEMENT

    @classmethod
    def parse(cls, text: str) -> "MovementLabel":
        text = text.strip()
        if text == NO_MOVEMENT:
            return cls(())
        return cls(tuple(part.strip() for part in text.split(",")))


def movement_label(
    s_t: Position3,
    s_next: Position3,
    meta: EnvironmentMetadata | None = None,
    dead_zone: float = MOVEMENT_DEAD_ZONE,
) -> MovementLabel:
    """Rule-based description of the displacement ``s_next - s_t``.

    An axis moving by more than ``dead_zone`` gets a command; it is marked
    "slightly" when its change is at most half the largest axis change.
    """
    words = meta.direction_words if meta is not None else DEFAULT_DIRECTION_WORDS
    delta = [b - a for a, b in zip(s_t, s_next)]
    largest = max(abs(d) for d in delta)
    commands = []
    for d, (pos_word, neg_word) in zip(delta, words):
        if abs(d) <= dead_zone:
            continue
        cmd = f"move {pos_word if d > 0 else neg_word}"
        if abs(d) <= largest / 2:
            cmd = "slightly " + cmd
        commands.append(cmd)
    return MovementLabel(tuple(commands))


def movement_label_space(words=DEFAULT_DIRECTION_WORDS) -> list[MovementLabel]:
    """Every per-axis combination of {none, +, -} x {plain, slightly}, minus all-none."""
    per_axis = []
    for pos_word, neg_word in words:
        choices = [None]
        for w in (pos_word, neg_word):
            choices += [f"move {w}", f"slightly move {w}"]
        per_axis.append(choices)
    space = []
    for combo in itertools.product(*per_axis):
        cmds = tuple(c for c in combo if c is not None)
        if cmds:
            space.append(MovementLabel(cmds))
    return space


def sample_movement_distractors(
    rng_seed: int, truth: MovementLabel, n: int = 3, words=DEFAULT_DIRECTION_WORDS
) -> list[MovementLabel]:
    if n < 1:
        raise ValueError("n must be >= 1")
    pool = [lab for lab in movement_label_space(words) if lab != truth]
    if len(pool) < n:
        raise SamplingExhausted(f"only {len(pool)} movement labels available, need {n}")
    rng = np.random.default_rng(rng_seed)
    picks = rng.choice(len(pool), size=n, replace=False)
    return [pool[i] for i in picks]


def sample_state_distractors(
    rng_seed: int, bounds: Box3, answer: Position3, n: int = 3, min_sep: float = 0.05
) -> list[Position3]:
    """Uniform samples in ``bounds``, each ``min_sep`` away from the answer and each other.

    Candidates must also render differently from the answer and from each
    other at 3-decimal precision.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(rng_seed)
    lo, hi = bounds.min.as_array(), bounds.max.as_array()
    taken = [answer.as_array()]
    rendered = {format_state(answer)}
    out = []
    for _ in range(n):
        for _attempt in range(MAX_REJECTIONS):
            cand = rng.uniform(lo, hi)
            text = format_state(cand)
            if text in rendered:
                continue
            if all(np.linalg.norm(cand - p) >= min_sep for p in taken):
                break
        else:
            raise SamplingExhausted(
                f"no distractor found after {MAX_REJECTIONS} draws (bounds {bounds}, min_sep {min_sep})"
            )
        taken.append(cand)
        rendered.add(text)
        out.append(Position3.of(cand))
    return out


@dataclass(frozen=True)
class GenConfig:
    frame_interval: int = 10
    distractors_per_item: int = 3
    min_distractor_separation: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.frame_interval < 1:
            raise ValueError("frame_interval must be >= 1")
        if self.distractors_per_item != 3:
            raise ValueError("four-option questions need exactly 3 distractors")


@dataclass(frozen=True)
class McqaItem:
    id: str
    task_id: str
    qa_type: QAType
    image_ref: str
    prompt_text: str
    options: tuple[str, str, str, str]
    answer_index: int
    truth: Position3 | MovementLabel
    current_state: Position3 | None
    seed: int

    @property
    def answer_letter(self) -> str:
        return OPTION_LETTERS[self.answer_index]

    def to_json(self) -> dict:
        if isinstance(self.truth, MovementLabel):
            truth = list(self.truth.commands)
        else:
            truth = list(self.truth)
        return {
            "id": self.id,
            "task_id": self.task_id,
            "qa_type": self.qa_type.value,
            "image": self.image_ref,
            "prompt": self.prompt_text,
            "options": list(self.options),
            "answer": self.answer_letter,
            "truth": truth,
            "current_state": list(self.current_state) if self.current_state is not None else None,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "McqaItem":
        qa_type = QAType(d["qa_type"])
        if qa_type is QAType.MOVEMENT:
            truth = MovementLabel(tuple(d["truth"]))
        else:
            truth = Position3.of(d["truth"])
        cs = d.get("current_state")
        return cls(
            id=d["id"],
            task_id=d["task_id"],
            qa_type=qa_type,
            image_ref=d["image"],
            prompt_text=d["prompt"],
            options=tuple(d["options"]),
            answer_index=OPTION_LETTERS.index(d["answer"]),
            truth=truth,
            current_state=Position3.of(cs) if cs is not None else None,
            seed=int(d["seed"]),
        )


class SftStyle(str, Enum):
    DIRECT = "direct"
    COT = "cot"


@dataclass(frozen=True)
class SftItem:
    id: str
    style: SftStyle
    image_ref: str
    prompt_text: str
    target_text: str

    def __post_init__(self):
        if not self.target_text:
            raise ValueError("SFT target must be non-empty")

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "style": self.style.value,
            "image": self.image_ref,
            "prompt": self.prompt_text,
            "target": self.target_text,
        }


def derive_seed(seed: int, key: str) -> int:
    digest = hashlib.sha256(f"{seed}:{key}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def rounded(p: Position3) -> Position3:
    """The position exactly as it is displayed in prompts."""
    return parse_state(format_state(p))


def _item_id(demo: Demonstration, t: int, kind: str) -> str:
    return f"{demo.task_id}/{demo.episode_id or 'ep'}/t{t:04d}/{kind}"


def sample_points(demo: Demonstration, interval: int) -> list[tuple[int, int]]:
    """(t, k*) pairs for every sampled frame that still has a keypoint ahead."""
    out = []
    for t in range(0, len(demo.frames), interval):
        k = next_keypoint(demo.keypoints, t)
        if k is None:
            break
        out.append((t, k))
    return out


def _shuffle(texts: list[str], seed: int) -> tuple[tuple[str, ...], int]:
    """Shuffle [truth, d1, d2, d3]; returns options and the truth's new index."""
    perm = np.random.default_rng([seed, 1]).permutation(len(texts))
    options = tuple(texts[i] for i in perm)
    return options, int(np.flatnonzero(perm == 0)[0])


def _meta_for(metas: Mapping[str, EnvironmentMetadata], task_id: str) -> EnvironmentMetadata:
    try:
        return metas[task_id]
    except KeyError:
        raise TemplateFieldMissing(f"no environment metadata for task {task_id!r}") from None


def build_mcqa_dataset(
    demos: Sequence[Demonstration],
    metas: Mapping[str, EnvironmentMetadata],
    cfg: GenConfig = GenConfig(),
    bounds: Box3 | None = None,
    qa_types: Iterable[QAType] = tuple(QAType),
) -> list[McqaItem]:
    """Waypoint, state and movement questions for every sampled frame.

    ``bounds`` is the region distractor states are drawn from; by default
    the bounding box of all demonstration positions.
    """
    if bounds is None:
        bounds = workspace_bounds(list(demos), 0.0)
    wanted = set(QAType(q) for q in qa_types)
    items = []
    for demo in demos:
        meta = _meta_for(metas, demo.task_id)
        for t, k in sample_points(demo, cfg.frame_interval):
            frame = demo.frames[t]
            s_t, s_k = demo.position(t), demo.position(k)

            if QAType.WAYPOINT in wanted:
                item_id = _item_id(demo, t, QAType.WAYPOINT.value)
                seed = derive_seed(cfg.seed, item_id)
                ds = sample_state_distractors(seed, bounds, s_k, cfg.distractors_per_item,
                                              cfg.min_distractor_separation)
                options, ans = _shuffle([format_state(s_k)] + [format_state(d) for d in ds], seed)
                items.append(McqaItem(
                    item_id, demo.task_id, QAType.WAYPOINT, frame.image_ref,
                    render_waypoint_prompt(meta, s_t, options), options, ans,
                    rounded(s_k), rounded(s_t), seed,
                ))

            if QAType.STATE in wanted:
                item_id = _item_id(demo, t, QAType.STATE.value)
                seed = derive_seed(cfg.seed, item_id)
                ds = sample_state_distractors(seed, bounds, s_t, cfg.distractors_per_item,
                                              cfg.min_distractor_separation)
                options, ans = _shuffle([format_state(s_t)] + [format_state(d) for d in ds], seed)
                items.append(McqaItem(
                    item_id, demo.task_id, QAType.STATE, frame.image_ref,
                    render_state_prompt(meta, options), options, ans,
                    rounded(s_t), None, seed,
                ))

            if QAType.MOVEMENT in wanted:
                item_id = _item_id(demo, t, QAType.MOVEMENT.value)
                seed = derive_seed(cfg.seed, item_id)
                truth = movement_label(s_t, s_k, meta)
                ds = sample_movement_distractors(seed, truth, cfg.distractors_per_item, meta.direction_words)
                options, ans = _shuffle([truth.render()] + [d.render() for d in ds], seed)
                items.append(McqaItem(
                    item_id, demo.task_id, QAType.MOVEMENT, frame.image_ref,
                    render_movement_prompt(meta, s_t, options), options, ans,
                    truth, rounded(s_t), seed,
                ))
    return items


def _annotation(annotations: Mapping[str, Mapping[str, str]], demo: Demonstration, t: int):
    for key in (f"{demo.task_id}:{demo.episode_id}:{t}", f"{demo.task_id}:{t}"):
        if key in annotations:
            ann = annotations[key]
            if not ann.get("plan") or not ann.get("subtask"):
                raise MissingAnnotation(f"annotation {key!r} needs non-empty 'plan' and 'subtask'")
            return ann
    raise MissingAnnotation(f"no plan/subtask annotation for {demo.task_id}:{t}")


def cot_target(plan: str, subtask: str, move: MovementLabel, answer: Position3) -> str:
    return (
        f"Plan: {plan}\n"
        f"Subtask: {subtask}\n"
        f"Move: {move.render()}\n"
        f"Answer: {format_state(answer)}"
    )


def build_sft_dataset(
    demos: Sequence[Demonstration],
    metas: Mapping[str, EnvironmentMetadata],
    cfg: GenConfig = GenConfig(),
    style: SftStyle | str = SftStyle.DIRECT,
    annotations: Mapping[str, Mapping[str, str]] | None = None,
    include_state: bool = False,
) -> list[SftItem]:
    """Next-waypoint SFT items, optionally followed by current-state items.

    CoT targets need a human-written plan and subtask for each item, looked up
    by ``"task:episode:t"`` and then ``"task:t"``. Current-state items always
    carry a bare position target, whatever the style.
    """
    style = SftStyle(style)
    annotations = annotations or {}
    items = []
    for demo in demos:
        meta = _meta_for(metas, demo.task_id)
        for t, k in sample_points(demo, cfg.frame_interval):
            frame = demo.frames[t]
            s_t, s_k = demo.position(t), demo.position(k)
            if style is SftStyle.COT:
                ann = _annotation(annotations, demo, t)
                target = cot_target(ann["plan"], ann["subtask"], movement_label(s_t, s_k, meta), s_k)
            else:
                target = format_state(s_k)
            items.append(SftItem(
                _item_id(demo, t, f"sft-{style.value}-waypoint"), style, frame.image_ref,
                render_waypoint_sft_prompt(meta, s_t), target,
            ))
            if include_state:
                items.append(SftItem(
                    _item_id(demo, t, f"sft-{style.value}-state"), style, frame.image_ref,
                    render_state_sft_prompt(meta), format_state(s_t),
                ))
    return items


def load_annotations(path: Path | str) -> dict[str, dict[str, str]]:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise MissingAnnotation(f"{path}: annotation file must be a JSON object")
    return data
