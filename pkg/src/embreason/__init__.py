"""Embodied-reasoning RL toolkit: demonstration QA datasets, reasoning rewards,
group-relative policy optimisation on toy policies, and an LLM-as-judge bench."""

__version__ = "0.1.0"
