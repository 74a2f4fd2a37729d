from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum


class Algorithm(str, Enum):
    GRPO = "grpo"
    RLOO = "rloo"
    REINFORCEPP = "reinforcepp"


@dataclass(frozen=True)
class TrainConfig:
    """Policy-optimization settings.

    The defaults mirror a large-model run (5 samples per prompt, rollout batch
    512, mini-batch 128, lr 1e-6). :meth:`toy` returns settings sized for the
    in-process toy policies.
    """

    algorithm: Algorithm = Algorithm.GRPO
    group_size: int = 5
    clip_epsilon: float = 0.2
    kl_beta: float = 0.01
    sampling_temperature: float = 1.0
    batch_size: int = 128
    rollout_batch_size: int = 512
    epochs: int = 5
    learning_rate: float = 1e-6
    weight_decay: float = 1e-2
    seed: int = 0
    advantage_std_epsilon: float = 1e-8
    max_steps: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if not 0 < self.clip_epsilon < 1:
            raise ValueError("clip_epsilon must be in (0, 1)")
        if self.kl_beta < 0:
            raise ValueError("kl_beta must be >= 0")
        if not self.sampling_temperature > 0:
            raise ValueError("sampling_temperature must be > 0")
        if self.batch_size < 1 or self.rollout_batch_size < 1 or self.epochs < 1:
            raise ValueError("batch sizes and epochs must be positive")

    @classmethod
    def toy(cls, **overrides) -> "TrainConfig":
        base = cls(learning_rate=1e-1, batch_size=16, rollout_batch_size=64, epochs=500)
        return replace(base, **overrides)
