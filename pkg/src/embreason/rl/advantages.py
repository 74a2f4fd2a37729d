"""Advantage estimators.

GRPO and RLOO normalise within each query's group of samples; REINFORCE++
(reduced here to its batch-level normalisation) z-scores the whole rollout
batch and ignores group boundaries.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .config import Algorithm


def _as_rewards(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.ndim != 1 or r.size < 2:
        raise ValueError(f"need a 1-D reward vector with at least 2 entries, got shape {r.shape}")
    return r


def _is_constant(r: np.ndarray) -> bool:
    return bool(np.all(r == r[0]))


def grpo_advantages(r, eps: float = 1e-8) -> np.ndarray:
    """(r - mean) / (population std + eps); exact zeros for a constant group."""
    r = _as_rewards(r)
    if _is_constant(r):
        return np.zeros_like(r)
    return (r - r.mean()) / (r.std() + eps)


def rloo_advantages(r) -> np.ndarray:
    """r_i minus the mean reward of the other G-1 samples."""
    r = _as_rewards(r)
    if _is_constant(r):
        return np.zeros_like(r)
    g = r.size
    return r - (r.sum() - r) / (g - 1)


def reinforcepp_advantages(batch_rewards, eps: float = 1e-8) -> np.ndarray:
    return grpo_advantages(batch_rewards, eps)


def compute_advantages(groups: Sequence[Sequence[float]], algorithm: Algorithm | str, eps: float = 1e-8) -> list[np.ndarray]:
    """Advantages for a rollout batch given as one reward vector per group."""
    algorithm = Algorithm(algorithm)
    if algorithm is Algorithm.GRPO:
        return [grpo_advantages(g, eps) for g in groups]
    if algorithm is Algorithm.RLOO:
        return [rloo_advantages(g) for g in groups]
    sizes = [len(g) for g in groups]
    flat = reinforcepp_advantages(np.concatenate([np.asarray(g, dtype=float) for g in groups]), eps)
    return np.split(flat, np.cumsum(sizes)[:-1])
