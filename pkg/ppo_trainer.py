"""
PPO Trainer
===========

Generator updates against the KL-regularized objective

    reward(x, y) − β · log(π(y|x) / π_ref(y|x)) + γ · E_pretrain[log π(x)]

optimized with a clipped importance ratio. The whole response is one
action, so the ratio ρ = exp(log π_new(y|x) − log π_old(y|x)) is taken
at sequence level.

Advantages are centered by a scalar moving-average baseline (decay 0.95,
started at the mean of the first batch). The reference policy π_ref is a
frozen copy of the generator taken by ``init_ppo_state``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

import diffcore as dc
from diffcore import ParamStore, Tensor
from errors import InvalidInputError, TrainingDivergenceError
from metrics import MetricsRecord
from reinforce_trainer import RewardSource, as_reward_fn
from rlgaf_config import (
    BASELINE_DECAY,
    DEFAULT_PPO_BATCH,
    DEFAULT_PPO_BETA,
    DEFAULT_PPO_CLIP_EPS,
    DEFAULT_PPO_EPOCHS,
    DEFAULT_PPO_GAMMA,
    DEFAULT_PPO_LR,
    DEFAULT_PRETRAIN_BATCH,
    DEFAULT_REWARD_MODE,
    REWARD_MODES,
)
from seqmodel import GenModel, Sequence, log_prob, log_prob_tensor, sample_batch, with_params


@dataclass
class PPOConfig:
    beta: float = DEFAULT_PPO_BETA
    gamma: float = DEFAULT_PPO_GAMMA
    clip_eps: float = DEFAULT_PPO_CLIP_EPS
    ppo_epochs: int = DEFAULT_PPO_EPOCHS
    batch_size: int = DEFAULT_PPO_BATCH
    lr: float = DEFAULT_PPO_LR
    reward_mode: str = DEFAULT_REWARD_MODE
    pretrain_batch_size: int = DEFAULT_PRETRAIN_BATCH
    workers: int = 1

    def validate(self) -> None:
        for name in ("beta", "gamma", "lr"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise InvalidInputError(f"{name} must be finite and non-negative, got {value}")
        if not 0 < self.clip_eps < 1:
            raise InvalidInputError(f"clip_eps must lie in (0, 1), got {self.clip_eps}")
        if self.ppo_epochs < 1 or self.batch_size < 1:
            raise InvalidInputError("ppo_epochs and batch_size must be >= 1")
        if self.reward_mode not in REWARD_MODES:
            raise InvalidInputError(f"unknown reward mode {self.reward_mode!r}")
        if self.gamma > 0 and self.pretrain_batch_size < 1:
            raise InvalidInputError("gamma > 0 needs pretrain_batch_size >= 1")


@dataclass
class PPOState:
    """Frozen reference parameters and the advantage baseline."""

    ref_params: ParamStore
    baseline: Optional[float] = None
    decay: float = BASELINE_DECAY

    def center(self, shaped_rewards: list[float]) -> list[float]:
        """Advantages against the current baseline, then fold the batch into it."""
        batch_mean = float(np.mean(shaped_rewards))
        if self.baseline is None:
            self.baseline = batch_mean
        advantages = [value - self.baseline for value in shaped_rewards]
        self.baseline = self.decay * self.baseline + (1.0 - self.decay) * batch_mean
        return advantages


def init_ppo_state(gen: GenModel) -> PPOState:
    return PPOState(ref_params=gen.params.copy())


@dataclass
class PretrainBatch:
    sequences: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.sequences)


@dataclass
class RolloutItem:
    """One sampled response frozen for the optimization epochs."""

    sequence: Sequence
    old_log_prob: float
    advantage: float


def sequence_kl(gen: GenModel, ref_params: ParamStore, sequence: Sequence) -> float:
    """log π(y|x) − log π_ref(y|x) for one sampled sequence."""
    return log_prob(gen, sequence) - log_prob(with_params(gen, ref_params), sequence)


def ppo_objective_value(reward: float, kl: float, pretrain_lp: float, cfg: PPOConfig) -> float:
    for value in (reward, kl, pretrain_lp):
        if not np.isfinite(value):
            raise InvalidInputError(f"objective terms must be finite, got {value}")
    return reward - cfg.beta * kl + cfg.gamma * pretrain_lp


def clip_ratio(rho: float, eps: float) -> float:
    if rho <= 0:
        raise InvalidInputError(f"importance ratio must be positive, got {rho}")
    if not 0 < eps < 1:
        raise InvalidInputError(f"clip epsilon must lie in (0, 1), got {eps}")
    return min(max(rho, 1.0 - eps), 1.0 + eps)


def surrogate_tensor(
    gen: GenModel,
    weights: dict[str, Tensor],
    items: list[RolloutItem],
    pretrain: PretrainBatch,
    cfg: PPOConfig,
) -> Tensor:
    """Mean clipped surrogate plus γ · mean pretraining log-likelihood."""
    terms = []
    for item in items:
        rho = dc.exp(dc.sub(log_prob_tensor(gen, weights, item.sequence), item.old_log_prob))
        unclipped = dc.mul(rho, item.advantage)
        clipped = dc.mul(dc.clip(rho, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps), item.advantage)
        terms.append(dc.minimum(unclipped, clipped))
    objective = dc.mean_of(terms)
    if cfg.gamma > 0:
        pretrain_lp = dc.mean_of([log_prob_tensor(gen, weights, seq) for seq in pretrain.sequences])
        objective = dc.add(objective, dc.mul(pretrain_lp, cfg.gamma))
    return objective


def collect_rollouts(
    gen: GenModel,
    reward_source: RewardSource,
    prompts: list[tuple],
    cfg: PPOConfig,
    state: PPOState,
    rng: np.random.Generator,
) -> tuple[list[RolloutItem], list[float], list[float]]:
    """Sample under the current (old) policy; returns items, rewards and KLs."""
    reward_fn = as_reward_fn(reward_source, cfg.reward_mode)
    sequences = sample_batch(gen, prompts, rng, cfg.workers)
    rewards = [float(reward_fn(seq)) for seq in sequences]
    kls = [sequence_kl(gen, state.ref_params, seq) for seq in sequences]
    advantages = state.center([r - cfg.beta * kl for r, kl in zip(rewards, kls)])
    items = [
        RolloutItem(seq, log_prob(gen, seq), advantage)
        for seq, advantage in zip(sequences, advantages)
    ]
    return items, rewards, kls


def ppo_step(
    gen: GenModel,
    reward_source: RewardSource,
    task,
    cfg: PPOConfig,
    state: PPOState,
    rng: np.random.Generator,
) -> tuple[GenModel, MetricsRecord]:
    """Sample a batch, then run ``ppo_epochs`` ascent steps on the frozen batch."""
    cfg.validate()
    if not gen.params.congruent(state.ref_params):
        raise InvalidInputError("reference parameters are not congruent with the generator")
    prompts = task.sample_prompts(cfg.batch_size, rng)
    items, rewards, kls = collect_rollouts(gen, reward_source, prompts, cfg, state, rng)

    pretrain = PretrainBatch()
    if cfg.gamma > 0:
        pretrain = PretrainBatch(task.pretrain_batch(cfg.pretrain_batch_size, rng))
        if not pretrain.sequences:
            raise InvalidInputError("gamma > 0 needs a non-empty pretraining batch")

    first_objective = None
    for _ in range(cfg.ppo_epochs):
        leaves = gen.params.track()
        objective = surrogate_tensor(gen, leaves, items, pretrain, cfg)
        if first_objective is None:
            first_objective = objective.item()
        grads = dc.backward(objective, leaves)
        if not grads.is_finite():
            raise TrainingDivergenceError(f"non-finite PPO gradient in {grads.first_non_finite()}")
        gen.params.apply_update(grads, cfg.lr)

    record = MetricsRecord(
        step=0,
        phase="gen",
        loss_g=-first_objective,
        reward_mean=float(np.mean(rewards)),
        kl_mean=float(np.mean(kls)),
    )
    return gen, record
