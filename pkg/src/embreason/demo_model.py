"""Demonstration data model and archive loader.

Archive layout, one directory per episode::

    <root>/<task_id>/<episode_id>/meta.json
    <root>/<task_id>/<episode_id>/states.jsonl
    <root>/<task_id>/<episode_id>/frames/000000.png ...
    <root>/<task_id>/<episode_id>/keypoints.json      (optional)

Positions are meters and angles radians. Images are never decoded; a frame
only carries the path of its image relative to the archive root.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import (
    EmptyInput,
    FrameCountMismatch,
    MalformedRecord,
    MissingFile,
    TooFewFrames,
)

_FRAME_NAME = re.compile(r"^(\d{6})\.png$")


def _check_finite(values: Iterable[float], what: str) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"{what} has a non-finite component: {v!r}")


@dataclass(frozen=True)
class Position3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        _check_finite((self.x, self.y, self.z), "position")

    def __iter__(self) -> Iterator[float]:
        return iter((self.x, self.y, self.z))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @classmethod
    def of(cls, values: Iterable[float]) -> "Position3":
        x, y, z = (float(v) for v in values)
        return cls(x, y, z)


@dataclass(frozen=True)
class Box3:
    min: Position3
    max: Position3

    def __post_init__(self):
        if any(lo > hi for lo, hi in zip(self.min, self.max)):
            raise ValueError(f"box min {self.min} exceeds max {self.max}")

    def contains(self, p: Position3) -> bool:
        return all(lo <= v <= hi for lo, v, hi in zip(self.min, p, self.max))


@dataclass(frozen=True)
class RobotState7:
    """End-effector position, roll/pitch/yaw orientation and gripper state."""

    position: Position3
    orientation: tuple[float, float, float]
    gripper_open: bool

    def __post_init__(self):
        if len(self.orientation) != 3:
            raise ValueError("orientation must have 3 components")
        _check_finite(self.orientation, "orientation")

    def check_bounds(self, bounds: Box3) -> None:
        if not bounds.contains(self.position):
            raise ValueError(f"position {self.position} outside workspace {bounds}")


@dataclass(frozen=True)
class Frame:
    index: int
    image_ref: str
    state: RobotState7

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("frame index must be non-negative")
        if not self.image_ref:
            raise ValueError("frame image_ref must be non-empty")


@dataclass(frozen=True)
class Demonstration:
    task_id: str
    instruction: str
    frames: tuple[Frame, ...]
    keypoints: tuple[int, ...] = ()
    episode_id: str = ""
    variation: int | None = None

    def __post_init__(self):
        if len(self.frames) < 2:
            raise TooFewFrames(f"demonstration needs at least 2 frames, got {len(self.frames)}")
        for i, frame in enumerate(self.frames):
            if frame.index != i:
                raise ValueError(f"frame at position {i} has index {frame.index}")
        n = len(self.frames)
        for a, b in zip(self.keypoints, self.keypoints[1:]):
            if b <= a:
                raise ValueError(f"keypoints not strictly increasing: {self.keypoints}")
        if self.keypoints and not (0 <= self.keypoints[0] and self.keypoints[-1] < n):
            raise ValueError(f"keypoints out of range for {n} frames: {self.keypoints}")

    def __len__(self) -> int:
        return len(self.frames)

    def positions(self) -> np.ndarray:
        """(N, 3) array of end-effector positions."""
        return np.array([tuple(f.state.position) for f in self.frames], dtype=float)

    def position(self, t: int) -> Position3:
        return self.frames[t].state.position

    def with_keypoints(self, keypoints: Iterable[int]) -> "Demonstration":
        return Demonstration(
            task_id=self.task_id,
            instruction=self.instruction,
            frames=self.frames,
            keypoints=tuple(int(k) for k in keypoints),
            episode_id=self.episode_id,
            variation=self.variation,
        )


DEFAULT_AXIS_CONVENTIONS = (
    "Front of table (positive) to back of table (negative)",
    "Left (negative) to right (positive)",
    "Down toward floor (negative) to up toward ceiling (positive)",
)


@dataclass(frozen=True)
class EnvironmentMetadata:
    """Scene facts rendered into question prompts.

    Defaults describe the tabletop Franka setup: world origin at the table
    center and the gripper as the always-visible scale reference.
    """

    task_description: str
    world_origin: Position3 = Position3(0.25, 0.0, 0.752)
    axis_conventions: tuple[str, str, str] = DEFAULT_AXIS_CONVENTIONS
    reference_object_name: str = "Gripper"
    reference_object_dims: tuple[float, float, float] = (0.06, 0.2, 0.09)
    reference_points: Mapping[str, Position3] = field(default_factory=dict)
    world_origin_description: str = "the center of the table surface"
    finger_length: float | None = 0.04
    robot_name: str = "Franka"
    # words for (+axis, -axis) movement along x, y, z
    direction_words: tuple[tuple[str, str], ...] = (
        ("forward", "backward"),
        ("right", "left"),
        ("up", "down"),
    )

    def __post_init__(self):
        if any(not (d > 0) for d in self.reference_object_dims):
            raise ValueError("reference object dimensions must be strictly positive")
        if len(self.axis_conventions) != 3 or not all(self.axis_conventions):
            raise ValueError("axis_conventions needs three non-empty strings")
        if len(self.direction_words) != 3:
            raise ValueError("direction_words needs one (+, -) pair per axis")

    @classmethod
    def from_dict(cls, d: Mapping) -> "EnvironmentMetadata":
        kw = dict(d)
        if "world_origin" in kw:
            kw["world_origin"] = Position3.of(kw["world_origin"])
        if "axis_conventions" in kw:
            kw["axis_conventions"] = tuple(kw["axis_conventions"])
        if "reference_object_dims" in kw:
            kw["reference_object_dims"] = tuple(float(v) for v in kw["reference_object_dims"])
        if "reference_points" in kw:
            kw["reference_points"] = {k: Position3.of(v) for k, v in kw["reference_points"].items()}
        if "direction_words" in kw:
            kw["direction_words"] = tuple(tuple(p) for p in kw["direction_words"])
        return cls(**kw)


def _episode_dir(root: Path | str, task_id: str, episode_id: str) -> Path:
    return Path(root) / task_id / episode_id


def _parse_state_line(line: str, lineno: int, path: str) -> tuple[int, RobotState7]:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"invalid JSON ({exc.msg})", lineno, path) from None
    if not isinstance(rec, dict):
        raise MalformedRecord("expected a JSON object", lineno, path)
    try:
        i = rec["i"]
        pos = rec["pos"]
        rpy = rec["rpy"]
        gripper = rec["gripper_open"]
    except KeyError as exc:
        raise MalformedRecord(f"missing key {exc.args[0]!r}", lineno, path) from None
    if not isinstance(i, int) or isinstance(i, bool):
        raise MalformedRecord("'i' must be an integer", lineno, path)
    if not isinstance(gripper, bool):
        raise MalformedRecord("'gripper_open' must be a boolean", lineno, path)
    for key, vec in (("pos", pos), ("rpy", rpy)):
        if (
            not isinstance(vec, list)
            or len(vec) != 3
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in vec)
        ):
            raise MalformedRecord(f"{key!r} must be a list of 3 numbers", lineno, path)
        if not all(math.isfinite(v) for v in vec):
            raise MalformedRecord(f"{key!r} has a non-finite value", lineno, path)
    state = RobotState7(Position3.of(pos), tuple(float(v) for v in rpy), gripper)
    return i, state


def load_demonstration(root: Path | str, task_id: str, episode_id: str) -> Demonstration:
    """Read one episode. Keypoints are left empty; see :func:`load_keypoints`."""
    ep = _episode_dir(root, task_id, episode_id)
    meta_path = ep / "meta.json"
    states_path = ep / "states.jsonl"
    frames_dir = ep / "frames"
    for p in (meta_path, states_path):
        if not p.is_file():
            raise MissingFile(str(p))
    if not frames_dir.is_dir():
        raise MissingFile(str(frames_dir))

    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"invalid JSON ({exc.msg})", exc.lineno, str(meta_path)) from None
    if not isinstance(meta, dict) or "instruction" not in meta:
        raise MalformedRecord("meta.json needs an 'instruction' key", None, str(meta_path))

    states = []
    with states_path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            i, state = _parse_state_line(line, lineno, str(states_path))
            if i != len(states):
                raise MalformedRecord(f"expected frame index {len(states)}, got {i}", lineno, str(states_path))
            states.append(state)

    image_indices = sorted(
        int(m.group(1)) for m in (_FRAME_NAME.match(p.name) for p in frames_dir.iterdir()) if m
    )
    if image_indices != list(range(len(states))):
        raise FrameCountMismatch(
            f"{ep}: {len(states)} state records but frame images {len(image_indices)} "
            "(or image indices not contiguous from 000000)"
        )

    frames = tuple(
        Frame(i, f"{task_id}/{episode_id}/frames/{i:06d}.png", s) for i, s in enumerate(states)
    )
    variation = meta.get("variation")
    return Demonstration(
        task_id=meta.get("task_id", task_id),
        instruction=meta["instruction"],
        frames=frames,
        episode_id=episode_id,
        variation=variation if isinstance(variation, int) else None,
    )


def discover_episodes(root: Path | str) -> list[tuple[str, str]]:
    """All (task_id, episode_id) pairs under ``root`` that have a meta.json, sorted."""
    root = Path(root)
    found = []
    for meta in root.glob("*/*/meta.json"):
        found.append((meta.parent.parent.name, meta.parent.name))
    return sorted(found)


def load_keypoints(root: Path | str, task_id: str, episode_id: str) -> list[int] | None:
    path = _episode_dir(root, task_id, episode_id) / "keypoints.json"
    if not path.is_file():
        return None
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"invalid JSON ({exc.msg})", exc.lineno, str(path)) from None
    if not isinstance(data, list) or not all(isinstance(k, int) for k in data):
        raise MalformedRecord("keypoints.json must be an array of integers", None, str(path))
    return data


def save_keypoints(root: Path | str, task_id: str, episode_id: str, keypoints: Iterable[int]) -> Path:
    path = _episode_dir(root, task_id, episode_id) / "keypoints.json"
    path.write_text(json.dumps([int(k) for k in keypoints]) + "\n")
    return path


def workspace_bounds(demos: list[Demonstration], margin: float = 0.0) -> Box3:
    """Axis-aligned box around every frame position, grown by ``margin`` per side."""
    if not demos:
        raise EmptyInput("workspace_bounds needs at least one demonstration")
    if margin < 0:
        raise ValueError("margin must be >= 0")
    pts = np.concatenate([d.positions() for d in demos], axis=0)
    lo = pts.min(axis=0) - margin
    hi = pts.max(axis=0) + margin
    return Box3(Position3.of(lo), Position3.of(hi))
