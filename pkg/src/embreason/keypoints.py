"""Keypoint extraction from demonstrations.

A frame is a keypoint when the gripper toggles relative to the previous
frame, or when the end-effector is nearly stopped at a local speed minimum.
The last frame is always kept unless disabled. Frame 0 is never a keypoint,
since a "next keypoint" must lie strictly after some earlier frame.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .demo_model import Demonstration
from .errors import TooFewFrames

# speeds closer than this are treated as equal when finding plateaus
_PLATEAU_TOL = 1e-12


@dataclass(frozen=True)
class KeypointParams:
    speed_epsilon: float = 1e-3  # meters per frame
    always_include_last: bool = True

    def __post_init__(self):
        if not self.speed_epsilon > 0:
            raise ValueError("speed_epsilon must be > 0")


def frame_speeds(positions: np.ndarray) -> np.ndarray:
    """Per-frame speed: central difference inside, one-sided at both ends."""
    pos = np.asarray(positions, dtype=float)
    n = len(pos)
    speed = np.empty(n)
    speed[0] = np.linalg.norm(pos[1] - pos[0])
    speed[-1] = np.linalg.norm(pos[-1] - pos[-2])
    if n > 2:
        speed[1:-1] = np.linalg.norm(pos[2:] - pos[:-2], axis=1) / 2.0
    return speed


def _plateau_minima(speed: np.ndarray) -> list[int]:
    """Start index of every run of equal speeds lower than both neighbouring runs.

    Missing neighbours (array ends) count as +inf.
    """
    n = len(speed)
    minima = []
    i = 0
    while i < n:
        j = i
        while j + 1 < n and abs(speed[j + 1] - speed[i]) <= _PLATEAU_TOL:
            j += 1
        left = speed[i - 1] if i > 0 else np.inf
        right = speed[j + 1] if j + 1 < n else np.inf
        if left > speed[i] and right > speed[i]:
            minima.append(i)
        i = j + 1
    return minima


def extract_keypoints(demo: Demonstration, params: KeypointParams = KeypointParams()) -> list[int]:
    n = len(demo.frames)
    if n < 2:
        raise TooFewFrames(f"need at least 2 frames, got {n}")
    gripper = [f.state.gripper_open for f in demo.frames]
    speed = frame_speeds(demo.positions())

    keys = {i for i in range(1, n) if gripper[i] != gripper[i - 1]}
    keys.update(i for i in _plateau_minima(speed) if i >= 1 and speed[i] < params.speed_epsilon)
    if params.always_include_last:
        keys.add(n - 1)
    return sorted(keys)


def next_keypoint(keypoints: Sequence[int], t: int) -> int | None:
    """Smallest keypoint strictly after ``t``, or None."""
    pos = bisect.bisect_right(keypoints, t)
    return keypoints[pos] if pos < len(keypoints) else None
