"""Rollout / update loop for the toy policies."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from ..errors import EmptyInput, NonFiniteGradient
from ..qa_gen import McqaItem, QAType
from ..reward import RewardBreakdown, score_mcqa
from ..templates import OPTION_LETTERS, format_state, parse_state
from .advantages import compute_advantages
from .config import TrainConfig
from .objective import RolloutGroup, clip_active, kl_value, objective, objective_coefficients
from .policies import Policy, ToyCategoricalPolicy, one_hot_features, toy_generate

RewardFn = Callable[[Any, str], "float | RewardBreakdown"]

METRIC_COLUMNS = ("step", "mean_reward", "mean_kl", "clip_fraction", "objective", "mean_response_chars")


@dataclass(frozen=True)
class StepMetrics:
    step: int
    mean_reward: float
    mean_kl: float
    clip_fraction: float
    objective: float
    mean_response_chars: float


@dataclass
class TrainResult:
    policy: Policy
    history: list[StepMetrics] = field(default_factory=list)


def _reward_value(r) -> float:
    return r.total if isinstance(r, RewardBreakdown) else float(r)


def train_step(policy: Policy, groups: Sequence[RolloutGroup], cfg: TrainConfig, step: int = 0):
    """One gradient-ascent update on the mean group objective.

    ``logprob_cur`` of every group is refreshed from ``policy`` first. Weight
    decay is decoupled: W <- W (1 - lr wd) + lr grad.
    """
    if not groups:
        raise EmptyInput("train_step needs at least one group")
    grad = np.zeros_like(policy.weights)
    obj = kl_sum = clipped = chars = 0.0
    rewards = []
    n_resp = 0
    for g in groups:
        if g.advantages is None:
            raise ValueError(f"group {g.query_id!r} has no advantages")
        g.logprob_cur = policy.logprobs(g.query, g.responses)
        coefs = objective_coefficients(g, cfg)
        grad += policy.weighted_grad(g.query, g.responses, coefs) / len(g.responses)
        obj += objective(g, cfg)
        kl_sum += float(np.sum(kl_value(g.logprob_cur, g.logprob_ref)))
        clipped += float(np.sum(clip_active(g.logprob_cur, g.logprob_old, g.advantages, cfg.clip_epsilon)))
        chars += sum(len(r) for r in g.responses)
        rewards.extend(g.rewards.tolist())
        n_resp += len(g.responses)
    grad /= len(groups)
    obj /= len(groups)
    if not (np.all(np.isfinite(grad)) and np.isfinite(obj)):
        raise NonFiniteGradient(f"non-finite gradient or objective at step {step}")

    lr = cfg.learning_rate
    new_policy = policy.with_weights(policy.weights * (1 - lr * cfg.weight_decay) + lr * grad)
    metrics = StepMetrics(
        step=step,
        mean_reward=float(np.mean(rewards)),
        mean_kl=kl_sum / n_resp,
        clip_fraction=clipped / n_resp,
        objective=obj,
        mean_response_chars=chars / n_resp,
    )
    return new_policy, metrics


def collect_rollouts(
    old: Policy, ref: Policy, queries: Sequence, reward_fn: RewardFn, cfg: TrainConfig, rng: np.random.Generator
) -> list[RolloutGroup]:
    groups = []
    for q in queries:
        samples = toy_generate(old, q, cfg.group_size, cfg.sampling_temperature, rng.integers(2**63))
        texts = [t for t, _ in samples]
        lp_old = np.array([lp for _, lp in samples])
        groups.append(RolloutGroup(
            query_id=getattr(q, "id", str(q)),
            responses=texts,
            logprob_old=lp_old,
            logprob_ref=ref.logprobs(q, texts),
            logprob_cur=lp_old.copy(),
            rewards=np.array([_reward_value(reward_fn(q, t)) for t in texts]),
            query=q,
        ))
    advs = compute_advantages([g.rewards for g in groups], cfg.algorithm, cfg.advantage_std_epsilon)
    for g, a in zip(groups, advs):
        g.advantages = a
    return groups


def train(dataset: Sequence, policy: Policy, reward_fn: RewardFn, cfg: TrainConfig) -> TrainResult:
    """Epochs over shuffled rollout batches, each split into update mini-batches.

    The old policy is frozen per rollout batch; the reference policy is the
    initial one. Stops early once ``cfg.max_steps`` updates have run.
    """
    if not dataset:
        raise EmptyInput("train needs a non-empty dataset")
    rng = np.random.default_rng(cfg.seed)
    ref = policy
    result = TrainResult(policy)
    step = 0
    for _epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        for start in range(0, len(order), cfg.rollout_batch_size):
            queries = [dataset[i] for i in order[start:start + cfg.rollout_batch_size]]
            groups = collect_rollouts(result.policy, ref, queries, reward_fn, cfg, rng)
            for mb in range(0, len(groups), cfg.batch_size):
                result.policy, m = train_step(result.policy, groups[mb:mb + cfg.batch_size], cfg, step)
                result.history.append(m)
                step += 1
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    return result
    return result


def mcqa_reward_fn(w_format: float = 1.0, w_answer: float = 1.0) -> RewardFn:
    def fn(item: McqaItem, text: str) -> RewardBreakdown:
        return score_mcqa(text, item.answer_letter, w_format, w_answer)

    return fn


def greedy_accuracy(policy: ToyCategoricalPolicy, items: Sequence[McqaItem]) -> float:
    hits = sum(int(np.argmax(policy.logits(it))) == it.answer_index for it in items)
    return hits / len(items)


def make_bandit(n_contexts: int = 64, seed: int = 0) -> list[McqaItem]:
    """Synthetic MCQA contexts with a random correct option each."""
    rng = np.random.default_rng(seed)
    items = []
    for i in range(n_contexts):
        pts = rng.uniform(-0.5, 0.5, size=(4, 3)) + np.arange(4)[:, None]  # distinct by construction
        options = tuple(format_state(p) for p in pts)
        ans = int(rng.integers(4))
        items.append(McqaItem(
            id=f"bandit/{i:03d}",
            task_id="bandit",
            qa_type=QAType.WAYPOINT,
            image_ref=f"bandit/{i:03d}.png",
            prompt_text=f"context {i}\n" + "\n".join(f"[[{l}]] {o}" for l, o in zip(OPTION_LETTERS, options)),
            options=options,
            answer_index=ans,
            truth=parse_state(options[ans]),
            current_state=None,
            seed=seed,
        ))
    return items


def bandit_policy(items: Sequence[McqaItem], seed: int = 0, init_scale: float = 0.01) -> ToyCategoricalPolicy:
    rng = np.random.default_rng([seed, 7])
    w = init_scale * rng.standard_normal((len(items), len(OPTION_LETTERS)))
    return ToyCategoricalPolicy(w, one_hot_features([it.id for it in items]))


def write_metrics_csv(history: Sequence[StepMetrics], path: Path | str, comment: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        w.writeheader()
        for m in history:
            row = asdict(m)
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return path

