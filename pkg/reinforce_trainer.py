"""
REINFORCE Trainer
=================

Monte Carlo policy-gradient updates for the generator. Each sampled
response is a trajectory; its per-step rewards come from the discriminator,
either only at the final position (terminal mode) or, in rollout mode, from
the mean reward of sampled completions of every intermediate prefix.

The estimator is the plain one, with no baseline subtracted:

    ĝ = (1/N) Σ_i Σ_t ∇ log π(a_t | s_t) · G_t

where G_t is the reward-to-go from position t.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

import diffcore as dc
from diffcore import GradStore
from discriminator import DiscModel, score
from errors import InvalidInputError, TrainingDivergenceError
from metrics import MetricsRecord
from rlgaf_config import (
    DEFAULT_REINFORCE_BATCH,
    DEFAULT_REINFORCE_LR,
    DEFAULT_REWARD_MODE,
    DEFAULT_ROLLOUT_COUNT,
    REWARD_MODES,
    REWARD_NORMALIZED,
    REWARD_RAW,
)
from seeding import ordered_map, split
from seqmodel import GenModel, Sequence, complete, sample_response, step_log_probs


RewardFn = Callable[[Sequence], float]
RewardSource = Union[DiscModel, RewardFn]


@dataclass
class ReinforceConfig:
    batch_size: int = DEFAULT_REINFORCE_BATCH
    rollout_count: int = DEFAULT_ROLLOUT_COUNT
    reward_mode: str = DEFAULT_REWARD_MODE
    lr: float = DEFAULT_REINFORCE_LR
    workers: int = 1

    def validate(self) -> None:
        # lr = 0 is accepted as a frozen-generator step.
        if self.batch_size < 1:
            raise InvalidInputError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.rollout_count < 0:
            raise InvalidInputError(f"rollout_count must be >= 0, got {self.rollout_count}")
        if self.reward_mode not in REWARD_MODES:
            raise InvalidInputError(f"unknown reward mode {self.reward_mode!r}")
        if not np.isfinite(self.lr) or self.lr < 0:
            raise InvalidInputError(f"learning rate must be finite and non-negative, got {self.lr}")


@dataclass
class Trajectory:
    sequence: Sequence
    step_log_probs: list
    step_rewards: list
    reward_to_go: list

    def __post_init__(self):
        lengths = {
            len(self.sequence.response),
            len(self.step_log_probs),
            len(self.step_rewards),
            len(self.reward_to_go),
        }
        if len(lengths) != 1 or 0 in lengths:
            raise InvalidInputError(
                "trajectory lists must share one non-zero length "
                f"(response {len(self.sequence.response)}, log-probs {len(self.step_log_probs)}, "
                f"rewards {len(self.step_rewards)}, reward-to-go {len(self.reward_to_go)})"
            )

    @property
    def terminal_reward(self) -> float:
        return self.step_rewards[-1]


def reward_to_go(step_rewards: list) -> list[float]:
    """Suffix sums: G_t = r_t + G_{t+1}."""
    if len(step_rewards) == 0:
        raise InvalidInputError("reward_to_go needs at least one reward")
    result = [0.0] * len(step_rewards)
    running = 0.0
    for t in range(len(step_rewards) - 1, -1, -1):
        running = float(step_rewards[t]) + running
        result[t] = running
    return result


def normalize_reward(value: float, mode: str) -> float:
    if not np.isfinite(value):
        raise InvalidInputError(f"discriminator score must be finite, got {value}")
    if mode == REWARD_RAW:
        return float(value)
    probability = dc.sigmoid_value(value)
    if mode == REWARD_NORMALIZED:
        # p - 0.5 rounds to -0.5 for tiny p
        return float(np.clip(probability - 0.5, np.nextafter(-0.5, 0.0), np.nextafter(0.5, 0.0)))
    if mode in REWARD_MODES:
        return probability
    raise InvalidInputError(f"unknown reward mode {mode!r}")


def discriminator_reward(disc: DiscModel, mode: str = DEFAULT_REWARD_MODE) -> RewardFn:
    """R(sequence): the discriminator score mapped through ``mode``."""
    if mode not in REWARD_MODES:
        raise InvalidInputError(f"unknown reward mode {mode!r}")
    return lambda seq: normalize_reward(score(disc, seq), mode)


def as_reward_fn(source: RewardSource, mode: str) -> RewardFn:
    if isinstance(source, DiscModel):
        return discriminator_reward(source, mode)
    return source


def assign_rewards(
    gen: GenModel,
    reward_source: RewardSource,
    sequence: Sequence,
    cfg: ReinforceConfig,
    rng: np.random.Generator = None,
) -> list[float]:
    """Per-step rewards r(s_t, a_t) for a complete sequence.

    Terminal mode puts R(full) on the last step and zeros elsewhere.
    Rollout mode rewards every earlier step with the mean R over
    ``rollout_count`` sampled completions of the prefix ending at a_t.
    """
    length = len(sequence.response)
    if length == 0:
        raise InvalidInputError("cannot assign rewards to an empty response")
    reward_fn = as_reward_fn(reward_source, cfg.reward_mode)
    full = float(reward_fn(sequence))
    rewards = [0.0] * length
    rewards[-1] = full
    if cfg.rollout_count == 0:
        return rewards
    if rng is None:
        raise InvalidInputError("rollout mode needs a random stream")
    for t in range(length - 1):
        partial = Sequence(sequence.prompt, sequence.response[: t + 1])
        total = 0.0
        for _ in range(cfg.rollout_count):
            total += float(reward_fn(complete(gen, partial, rng)))
        rewards[t] = total / cfg.rollout_count
    return rewards


def build_trajectory(gen: GenModel, sequence: Sequence, step_rewards: list) -> Trajectory:
    log_probs = [lp.item() for lp in step_log_probs(gen, gen.params.constants(), sequence)]
    return Trajectory(
        sequence=sequence,
        step_log_probs=log_probs,
        step_rewards=[float(r) for r in step_rewards],
        reward_to_go=reward_to_go(step_rewards),
    )


def estimate_gradient(gen: GenModel, trajectories: list[Trajectory]) -> GradStore:
    """ĝ, reduced in trajectory order; congruent with ``gen.params``."""
    if not trajectories:
        raise InvalidInputError("estimate_gradient needs at least one trajectory")
    leaves = gen.params.track()
    terms = []
    for trajectory in trajectories:
        log_probs = step_log_probs(gen, leaves, trajectory.sequence)
        for log_p, g in zip(log_probs, trajectory.reward_to_go):
            if g != 0.0:
                terms.append(dc.mul(log_p, g))
    if not terms:
        return GradStore.zeros_like(gen.params)
    objective = dc.mul(dc.add_all(terms), 1.0 / len(trajectories))
    grads = dc.backward(objective, leaves)
    if not grads.is_finite():
        raise TrainingDivergenceError(f"non-finite policy gradient in {grads.first_non_finite()}")
    return grads


def surrogate_loss(trajectories: list[Trajectory]) -> float:
    """-(1/N) Σ_i Σ_t log π(a_t|s_t) G_t, from the recorded log-probs."""
    total = sum(
        lp * g
        for trajectory in trajectories
        for lp, g in zip(trajectory.step_log_probs, trajectory.reward_to_go)
    )
    return -total / len(trajectories)


def sample_trajectories(
    gen: GenModel,
    reward_source: RewardSource,
    prompts: list[tuple],
    cfg: ReinforceConfig,
    rng: np.random.Generator,
) -> list[Trajectory]:
    """One trajectory per prompt, each on its own split stream."""
    reward_fn = as_reward_fn(reward_source, cfg.reward_mode)
    streams = split(rng, len(prompts))

    def run(index: int) -> Trajectory:
        stream = streams[index]
        sequence = sample_response(gen, prompts[index], stream)
        rewards = assign_rewards(gen, reward_fn, sequence, cfg, stream)
        return build_trajectory(gen, sequence, rewards)

    return ordered_map(run, list(range(len(prompts))), cfg.workers)


def reinforce_step(
    gen: GenModel,
    reward_source: RewardSource,
    task,
    cfg: ReinforceConfig,
    rng: np.random.Generator,
) -> tuple[GenModel, MetricsRecord]:
    """Sample N trajectories, assign rewards and ascend: params += lr · ĝ."""
    cfg.validate()
    prompts = task.sample_prompts(cfg.batch_size, rng)
    trajectories = sample_trajectories(gen, reward_source, prompts, cfg, rng)
    grads = estimate_gradient(gen, trajectories)
    gen.params.apply_update(grads, cfg.lr)
    record = MetricsRecord(
        step=0,
        phase="gen",
        loss_g=surrogate_loss(trajectories),
        reward_mean=float(np.mean([t.terminal_reward for t in trajectories])),
    )
    return gen, record
