"""Prompt templates for the MCQA and SFT training datasets."""

from __future__ import annotations

from decimal import ROUND_HALF_UP, Decimal
from typing import Sequence

from .demo_model import EnvironmentMetadata, Position3
from .errors import TemplateFieldMissing

OPTION_LETTERS = ("A", "B", "C", "D")

_MILLI = Decimal("0.001")


def format_coord(v: float) -> str:
    # shortest repr, so 0.0005 rounds up like it reads
    d = Decimal(repr(float(v))).quantize(_MILLI, rounding=ROUND_HALF_UP)
    if d == 0:
        d = abs(d)
    return f"{d:.3f}"


def format_state(s: Position3 | Sequence[float]) -> str:
    """``[x, y, z]`` with every component rounded half away from zero to 3 places."""
    return "[" + ", ".join(format_coord(v) for v in s) + "]"


def parse_state(text: str) -> Position3:
    inner = text.strip()
    if not (inner.startswith("[") and inner.endswith("]")):
        raise ValueError(f"not a state vector: {text!r}")
    parts = [p.strip() for p in inner[1:-1].split(",")]
    if len(parts) != 3:
        raise ValueError(f"expected 3 components: {text!r}")
    return Position3.of(float(p) for p in parts)


def _num(v: float) -> str:
    return f"{v:g}"


def _header(robot: str) -> str:
    return f"# You are {robot} Robot Assistant: Task Planning and Execution System"


def _visual_block() -> str:
    return (
        "## Visual Input\n"
        "\n"
        "You will receive a single combined image for scene understanding:\n"
        "- <image>: front view of the workspace"
    )


def _coordinate_block(meta: EnvironmentMetadata, full: bool = True) -> str:
    lines = ["## Coordinate System", "", "The world coordinate frame follows these conventions:"]
    if full:
        lines.append("- This is based on the front view. (Wrist view has the Y-axis (left and right) opposite)")
    else:
        lines.append("- This is based on the front view.")
    for axis, text in zip("XYZ", meta.axis_conventions):
        lines.append(f"- {axis}-axis: {text}")
    if full:
        o = meta.world_origin
        lines.append(
            f"- World origin [{_num(o.x)}, {_num(o.y)}, {_num(o.z)}] is at {meta.world_origin_description}"
        )
        for name, p in meta.reference_points.items():
            lines.append(f"- {name} is at [{_num(p.x)}, {_num(p.y)}, {_num(p.z)}]")
    return "\n".join(lines)


def _robot_spec_block(meta: EnvironmentMetadata) -> str:
    w, l, h = meta.reference_object_dims
    line = (
        f"- {meta.reference_object_name} dimensions: {_num(w)}m width (x-direction) × {_num(l)} length "
        f"(y-direction) × {_num(h)} height (z-direction)"
    )
    if meta.finger_length is not None:
        line += f", with fingers {_num(meta.finger_length)} in length"
    return "## Robot Specifications\n" + line


def _state_block(s_t: Position3) -> str:
    return "## Current Robot State\nPosition: " + format_state(s_t)


def _options_block(question: str, options: Sequence[str]) -> str:
    if len(options) != 4:
        raise TemplateFieldMissing(f"expected 4 options, got {len(options)}")
    if len(set(options)) != 4:
        raise ValueError(f"options must be distinct: {list(options)}")
    if any(not o for o in options):
        raise TemplateFieldMissing("empty option text")
    lines = ["### Choice Question", question, ""]
    lines += [f"[[{letter}]] {opt}" for letter, opt in zip(OPTION_LETTERS, options)]
    return "\n".join(lines)


OUTPUT_FORMAT_BLOCK = (
    "## Output Format\n"
    "\n"
    "You FIRST think about the reasoning process as an internal monologue and then provide the final answer.\n"
    "The reasoning process MUST BE enclosed within <think> </think> tags.\n"
    "The final answer MUST BE enclosed within <answer> </answer> tags.\n"
    "\n"
    "Example output format:\n"
    "\n"
    "<think>\n"
    "[detailed reasoning process]\n"
    "</think>\n"
    "<answer>\n"
    "[[A]]\n"
    "</answer>"
)

WAYPOINT_QUESTION = (
    "Based on the provided image and current robot state, predict the next waypoint position [x, y, z] "
    "Choose the most accurate option:"
)
STATE_QUESTION = "Let's predict the current robot state base on image"
MOVEMENT_QUESTION = "What movements are needed to get to the next keypoint to perform the task?"
WAYPOINT_SFT_QUESTION = "Let's determine the next robot state to execute task"


def _task_block(meta: EnvironmentMetadata, title: str = "Task description") -> str:
    if not meta.task_description:
        raise TemplateFieldMissing("task_description")
    return f"## {title}\n{meta.task_description}"


def _join(blocks: Sequence[str]) -> str:
    return "\n\n".join(blocks) + "\n"


def render_waypoint_prompt(meta: EnvironmentMetadata, s_t: Position3, options: Sequence[str]) -> str:
    return _join([
        _header(meta.robot_name),
        _task_block(meta),
        _visual_block(),
        _coordinate_block(meta),
        _robot_spec_block(meta),
        _state_block(s_t),
        _options_block(WAYPOINT_QUESTION, options),
        OUTPUT_FORMAT_BLOCK,
    ])


def render_state_prompt(meta: EnvironmentMetadata, options: Sequence[str]) -> str:
    return _join([
        _header(meta.robot_name),
        _task_block(meta, "Robot Task description"),
        _visual_block(),
        _coordinate_block(meta),
        _robot_spec_block(meta),
        _options_block(STATE_QUESTION, options),
        OUTPUT_FORMAT_BLOCK,
    ])


def render_movement_prompt(meta: EnvironmentMetadata, s_t: Position3, options: Sequence[str]) -> str:
    # the movement template uses the short coordinate block and no robot specs
    return _join([
        _header(meta.robot_name),
        _task_block(meta),
        _visual_block(),
        _coordinate_block(meta, full=False),
        _state_block(s_t),
        _options_block(MOVEMENT_QUESTION, options),
        OUTPUT_FORMAT_BLOCK,
    ])


def render_waypoint_sft_prompt(meta: EnvironmentMetadata, s_t: Position3) -> str:
    return _join([
        _header(meta.robot_name),
        _task_block(meta),
        _visual_block(),
        _coordinate_block(meta),
        _robot_spec_block(meta),
        _state_block(s_t),
        WAYPOINT_SFT_QUESTION,
    ])


def render_state_sft_prompt(meta: EnvironmentMetadata) -> str:
    return _join([
        _header(meta.robot_name),
        _task_block(meta),
        _visual_block(),
        _coordinate_block(meta),
        _robot_spec_block(meta),
        STATE_QUESTION,
    ])
