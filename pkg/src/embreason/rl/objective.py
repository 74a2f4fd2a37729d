"""Clipped-ratio surrogate with a KL penalty toward a reference policy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .config import TrainConfig


@dataclass
class RolloutGroup:
    """One query's G sampled responses and their per-response statistics.

    Log-probabilities are sequence level. ``query`` is whatever the policy's
    feature map accepts; it is not serialised.
    """

    query_id: str
    responses: list[str]
    logprob_old: np.ndarray
    logprob_ref: np.ndarray
    logprob_cur: np.ndarray
    rewards: np.ndarray
    advantages: np.ndarray | None = None
    query: Any = None

    def __post_init__(self):
        g = len(self.responses)
        for name in ("logprob_old", "logprob_ref", "logprob_cur", "rewards"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (g,):
                raise ValueError(f"{name} has shape {arr.shape}, expected ({g},)")
            setattr(self, name, arr)
        if self.advantages is not None:
            self.advantages = np.asarray(self.advantages, dtype=float)


def kl_value(logp_cur, logp_ref):
    """exp(d) - d - 1 with d = logp_ref - logp_cur.

    Non-negative and unbiased for KL(cur || ref) when responses are drawn
    from the current policy.
    """
    d = np.asarray(logp_ref, dtype=float) - np.asarray(logp_cur, dtype=float)
    out = np.expm1(d) - d
    return float(out) if out.ndim == 0 else out


def clipped_surrogate(logp_cur, logp_old, advantage, eps_clip: float = 0.2):
    ratio = np.exp(np.asarray(logp_cur, dtype=float) - np.asarray(logp_old, dtype=float))
    a = np.asarray(advantage, dtype=float)
    out = np.minimum(ratio * a, np.clip(ratio, 1 - eps_clip, 1 + eps_clip) * a)
    return float(out) if out.ndim == 0 else out


def clip_active(logp_cur, logp_old, advantage, eps_clip: float = 0.2) -> np.ndarray:
    """True where the clipped term wins the min, i.e. the ratio gradient is cut."""
    ratio = np.exp(np.asarray(logp_cur, dtype=float) - np.asarray(logp_old, dtype=float))
    a = np.asarray(advantage, dtype=float)
    return np.clip(ratio, 1 - eps_clip, 1 + eps_clip) * a < ratio * a


def objective(group: RolloutGroup, cfg: TrainConfig) -> float:
    """Group mean of clipped surrogate minus beta * KL."""
    if group.advantages is None:
        raise ValueError(f"group {group.query_id!r} has no advantages")
    surr = clipped_surrogate(group.logprob_cur, group.logprob_old, group.advantages, cfg.clip_epsilon)
    kl = kl_value(group.logprob_cur, group.logprob_ref)
    return float(np.mean(surr - cfg.kl_beta * kl))


def objective_coefficients(group: RolloutGroup, cfg: TrainConfig) -> np.ndarray:
    """d objective_i / d logp_cur_i for every response, before the 1/G average.

    The surrogate contributes ratio * A unless clipping is active; the KL
    penalty contributes beta * (exp(d) - 1).
    """
    ratio = np.exp(group.logprob_cur - group.logprob_old)
    active = clip_active(group.logprob_cur, group.logprob_old, group.advantages, cfg.clip_epsilon)
    surr = np.where(active, 0.0, ratio * group.advantages)
    return surr + cfg.kl_beta * np.expm1(group.logprob_ref - group.logprob_cur)
