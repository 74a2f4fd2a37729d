from .advantages import compute_advantages, grpo_advantages, reinforcepp_advantages, rloo_advantages
from .config import Algorithm, TrainConfig
from .export import export_advantages
from .objective import RolloutGroup, clipped_surrogate, kl_value, objective
from .policies import ToyCategoricalPolicy, ToyGaussianPolicy, one_hot_features, toy_generate, toy_grad_logprob
from .trainer import (
    StepMetrics,
    TrainResult,
    bandit_policy,
    greedy_accuracy,
    make_bandit,
    mcqa_reward_fn,
    train,
    train_step,
    write_metrics_csv,
)
