"""
Adversarial Loop
================

Alternates discriminator and generator training:

1. The discriminator sees a few expert demonstrations (label 1) and as many
   fresh responses from the current generator (label 0) and takes a few
   gradient steps. Negatives are never replayed from earlier rounds.
2. The generator takes many more steps with the updated discriminator as
   its reward, trying to get its outputs labelled 1.
3. A sample of generator outputs is checked for mode collapse.

The discriminator is kept deliberately weaker (fewer samples and steps)
than the generator; a schedule that trains it more often than the
generator triggers a RegularizationWarning.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

import diffcore as dc
from discriminator import DiscModel, LabeledBatch, accuracy, disc_train_step, prob_real
from errors import InvalidInputError, ModeCollapseError
from gumbel_path import GumbelConfig, gumbel_generator_step
from metrics import MetricsLog, MetricsRecord, read_metrics
from ppo_trainer import PPOConfig, PPOState, init_ppo_state, ppo_step
from reinforce_trainer import ReinforceConfig, reinforce_step
from rlgaf_config import (
    BIGRAM_ENTROPY_MIN,
    DEFAULT_COLLAPSE_SAMPLES,
    DEFAULT_DISC_LR,
    DEFAULT_DISC_OPTIMIZER,
    DEFAULT_DISC_SAMPLES_PER_ROUND,
    DEFAULT_DISC_STEPS_PER_ROUND,
    DEFAULT_EVAL_SAMPLES,
    DEFAULT_GEN_STEPS_PER_ROUND,
    DEFAULT_SMOOTHING_WINDOW,
    DEFAULT_TOTAL_ROUNDS,
    DISC_OPTIMIZER_ADAM,
    DISC_OPTIMIZERS,
    DISTINCT_RATIO_MIN,
    MAX_SINGLE_RESPONSE_SHARE,
    MIN_COLLAPSE_SAMPLES,
)
from seqmodel import GenModel, Sequence, sample_batch


STRATEGY_REINFORCE = "reinforce"
STRATEGY_PPO = "ppo"
STRATEGY_GUMBEL = "gumbel"
ADVERSARIAL_STRATEGIES = (STRATEGY_REINFORCE, STRATEGY_PPO, STRATEGY_GUMBEL)


class RegularizationWarning(UserWarning):
    """The discriminator is scheduled to train more than the generator."""


@dataclass
class LoopConfig:
    strategy: str = STRATEGY_PPO
    gen_steps_per_round: int = DEFAULT_GEN_STEPS_PER_ROUND
    disc_steps_per_round: int = DEFAULT_DISC_STEPS_PER_ROUND
    disc_samples_per_round: int = DEFAULT_DISC_SAMPLES_PER_ROUND
    total_rounds: int = DEFAULT_TOTAL_ROUNDS
    disc_lr: float = DEFAULT_DISC_LR
    disc_optimizer: str = DEFAULT_DISC_OPTIMIZER
    disc_pretrain_steps: int = 0
    distinct_ratio_min: float = DISTINCT_RATIO_MIN
    bigram_entropy_min: float = BIGRAM_ENTROPY_MIN
    max_single_share: float = MAX_SINGLE_RESPONSE_SHARE
    collapse_samples: int = DEFAULT_COLLAPSE_SAMPLES
    eval_samples: int = DEFAULT_EVAL_SAMPLES
    smoothing_window: int = DEFAULT_SMOOTHING_WINDOW
    halt_on_collapse: bool = False

    def validate(self) -> None:
        if self.strategy not in ADVERSARIAL_STRATEGIES:
            raise InvalidInputError(
                f"strategy must be one of {ADVERSARIAL_STRATEGIES}, got {self.strategy!r}"
            )
        for name in (
            "gen_steps_per_round",
            "disc_steps_per_round",
            "total_rounds",
            "disc_pretrain_steps",
        ):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.disc_samples_per_round < 1 or self.eval_samples < 1:
            raise InvalidInputError("disc_samples_per_round and eval_samples must be >= 1")
        if self.collapse_samples < MIN_COLLAPSE_SAMPLES:
            raise InvalidInputError(
                f"collapse_samples must be >= {MIN_COLLAPSE_SAMPLES}, got {self.collapse_samples}"
            )
        if self.smoothing_window < 1:
            raise InvalidInputError("smoothing_window must be >= 1")
        if not np.isfinite(self.disc_lr) or self.disc_lr < 0:
            raise InvalidInputError(f"disc_lr must be finite and non-negative, got {self.disc_lr}")
        if self.disc_optimizer not in DISC_OPTIMIZERS:
            raise InvalidInputError(
                f"disc_optimizer must be one of {DISC_OPTIMIZERS}, got {self.disc_optimizer!r}"
            )

    def make_disc_optimizer(self) -> Optional[dc.Adam]:
        """Fresh optimizer state for the discriminator; None means plain gradient descent."""
        if self.disc_optimizer == DISC_OPTIMIZER_ADAM:
            return dc.Adam(self.disc_lr)
        return None

    def regularization_warning(self) -> Optional[str]:
        if self.disc_steps_per_round > self.gen_steps_per_round:
            return (
                f"discriminator steps per round ({self.disc_steps_per_round}) exceed "
                f"generator steps ({self.gen_steps_per_round}); the discriminator may overpower "
                "the generator"
            )
        return None


# Mode collapse

@dataclass
class CollapseReport:
    flagged: bool
    distinct_response_ratio: float
    mean_distinct_token_ratio: float
    bigram_entropy: float
    top_response: tuple
    top_share: float
    sample_count: int
    reasons: list = field(default_factory=list)


def bigram_entropy(responses: list[tuple]) -> float:
    """Entropy (nats) of the pooled within-response bigram distribution; 0 without bigrams."""
    counts = Counter(pair for r in responses for pair in zip(r, r[1:]))
    total = sum(counts.values())
    if total == 0:
        return 0.0
    probs = np.array(list(counts.values()), dtype=np.float64) / total
    return max(0.0, float(-np.sum(probs * np.log(probs))))


def detect_mode_collapse(
    samples: list[Sequence],
    distinct_ratio_min: float = DISTINCT_RATIO_MIN,
    bigram_entropy_min: float = BIGRAM_ENTROPY_MIN,
    max_single_share: float = MAX_SINGLE_RESPONSE_SHARE,
) -> CollapseReport:
    """Flag repetitive or degenerate output; all statistics are reported either way.

    An empty response has a distinct-token ratio of 0.
    """
    if len(samples) < MIN_COLLAPSE_SAMPLES:
        raise InvalidInputError(
            f"collapse detection needs at least {MIN_COLLAPSE_SAMPLES} samples, got {len(samples)}"
        )
    responses = [s.response for s in samples]
    n = len(responses)
    counts = Counter(responses)
    top_response, top_count = counts.most_common(1)[0]
    distinct_ratio = len(counts) / n
    token_ratios = [len(set(r)) / len(r) if r else 0.0 for r in responses]
    entropy = bigram_entropy(responses)
    top_share = top_count / n

    reasons = []
    if distinct_ratio < distinct_ratio_min:
        reasons.append(f"distinct response ratio {distinct_ratio:.3f} < {distinct_ratio_min}")
    if entropy < bigram_entropy_min:
        reasons.append(f"bigram entropy {entropy:.3f} < {bigram_entropy_min}")
    if top_share > max_single_share:
        reasons.append(f"one response makes up {top_share:.0%} of samples")
    return CollapseReport(
        flagged=bool(reasons),
        distinct_response_ratio=distinct_ratio,
        mean_distinct_token_ratio=float(np.mean(token_ratios)),
        bigram_entropy=entropy,
        top_response=top_response,
        top_share=top_share,
        sample_count=n,
        reasons=reasons,
    )


def smooth_rewards(raw: list[float], window: int) -> list[float]:
    """Trailing moving average; early entries average over the available prefix."""
    if window < 1:
        raise InvalidInputError(f"smoothing window must be >= 1, got {window}")
    values = [float(v) for v in raw]
    smoothed = []
    for i in range(len(values)):
        span = values[max(0, i - window + 1): i + 1]
        # offset from the first value so a constant window is returned exactly
        first = span[0]
        smoothed.append(first + math.fsum(v - first for v in span) / len(span))
    return smoothed


def reward_curve(metrics_path: Path, window: int, phase: str = "gen") -> list[float]:
    """Smoothed reward_mean series re-read from a metrics file."""
    rewards = [
        r.reward_mean for r in read_metrics(metrics_path)
        if r.phase == phase and r.reward_mean is not None
    ]
    return smooth_rewards(rewards, window)


# Generator strategies

@dataclass
class GeneratorTrainer:
    """Dispatches generator steps to the configured strategy."""

    strategy: str
    reinforce: ReinforceConfig = field(default_factory=ReinforceConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    gumbel: GumbelConfig = field(default_factory=GumbelConfig)
    ppo_state: Optional[PPOState] = None
    noise_rng: Optional[np.random.Generator] = None

    def validate(self) -> None:
        if self.strategy == STRATEGY_REINFORCE:
            self.reinforce.validate()
        elif self.strategy == STRATEGY_PPO:
            self.ppo.validate()
        elif self.strategy == STRATEGY_GUMBEL:
            self.gumbel.validate()
        else:
            raise InvalidInputError(f"unknown generator strategy {self.strategy!r}")

    def step(
        self,
        gen: GenModel,
        disc: DiscModel,
        task,
        rng: np.random.Generator,
        step: int,
    ) -> tuple[GenModel, MetricsRecord]:
        if self.strategy == STRATEGY_REINFORCE:
            gen, record = reinforce_step(gen, disc, task, self.reinforce, rng)
        elif self.strategy == STRATEGY_PPO:
            if self.ppo_state is None:
                self.ppo_state = init_ppo_state(gen)
            gen, record = ppo_step(gen, disc, task, self.ppo, self.ppo_state, rng)
        elif self.strategy == STRATEGY_GUMBEL:
            gen, record = gumbel_generator_step(
                gen, disc, task, self.gumbel, rng, step, noise_rng=self.noise_rng
            )
        else:
            raise InvalidInputError(f"unknown generator strategy {self.strategy!r}")
        record.step = step
        return gen, record


# Rounds

@dataclass
class RoundResult:
    round_index: int
    gen: GenModel
    disc: DiscModel
    negatives: LabeledBatch
    disc_records: list
    gen_records: list
    eval_record: MetricsRecord
    collapse: CollapseReport


def _disc_batches(
    gen: GenModel, task, count: int, provenance: int, rng: np.random.Generator
) -> tuple[LabeledBatch, LabeledBatch]:
    real = LabeledBatch.of(task.expert_batch(count, rng), 1)
    fake = LabeledBatch.of(sample_batch(gen, task.sample_prompts(count, rng), rng), 0, provenance)
    return real, fake


def _disc_record(step: int, disc: DiscModel, losses: tuple, real, fake) -> MetricsRecord:
    _, loss_real, loss_fake = losses
    return MetricsRecord(
        step=step,
        phase="disc",
        loss_d_real=loss_real,
        loss_d_fake=loss_fake,
        disc_acc=accuracy(disc, LabeledBatch(real.items + fake.items)),
    )


def pretrain_discriminator(
    gen: GenModel,
    disc: DiscModel,
    task,
    cfg: LoopConfig,
    rng: np.random.Generator,
    log: Optional[MetricsLog] = None,
    optimizer: Optional[dc.Adam] = None,
) -> DiscModel:
    """Discriminator-only warm-up against the initial generator."""
    if optimizer is None:
        optimizer = cfg.make_disc_optimizer()
    for step in range(cfg.disc_pretrain_steps):
        real, fake = _disc_batches(gen, task, cfg.disc_samples_per_round, -1, rng)
        losses = disc_train_step(disc, real, fake, cfg.disc_lr, optimizer)
        if log is not None:
            log.append(_disc_record(step, disc, losses, real, fake))
    return disc


def evaluate_round(
    gen: GenModel,
    disc: DiscModel,
    task,
    cfg: LoopConfig,
    rng: np.random.Generator,
    round_index: int,
) -> tuple[MetricsRecord, CollapseReport]:
    """Held-out discriminator accuracy, mean σ(score) of fresh outputs and collapse check."""
    real, fake = _disc_batches(gen, task, cfg.eval_samples, round_index, rng)
    samples = sample_batch(gen, task.sample_prompts(cfg.collapse_samples, rng), rng)
    report = detect_mode_collapse(
        samples, cfg.distinct_ratio_min, cfg.bigram_entropy_min, cfg.max_single_share
    )
    record = MetricsRecord(
        step=round_index,
        phase="eval",
        disc_acc=accuracy(disc, LabeledBatch(real.items + fake.items)),
        reward_mean=float(np.mean([prob_real(disc, seq) for seq in fake.sequences])),
        collapse_flag=report.flagged,
    )
    return record, report


def rlgaf_round(
    gen: GenModel,
    disc: DiscModel,
    task,
    cfg: LoopConfig,
    trainer: GeneratorTrainer,
    rng: np.random.Generator,
    round_index: int = 0,
    disc_optimizer: Optional[dc.Adam] = None,
) -> RoundResult:
    """One discriminator phase followed by one generator phase.

    ``disc_optimizer`` carries Adam moments between rounds; without it the
    round starts from fresh optimizer state.
    """
    if disc_optimizer is None:
        disc_optimizer = cfg.make_disc_optimizer()
    disc_offset = cfg.disc_pretrain_steps + round_index * cfg.disc_steps_per_round
    real, fake = _disc_batches(gen, task, cfg.disc_samples_per_round, round_index, rng)
    disc_records = []
    for i in range(cfg.disc_steps_per_round):
        losses = disc_train_step(disc, real, fake, cfg.disc_lr, disc_optimizer)
        disc_records.append(_disc_record(disc_offset + i, disc, losses, real, fake))

    gen_records = []
    for j in range(cfg.gen_steps_per_round):
        gen, record = trainer.step(gen, disc, task, rng, round_index * cfg.gen_steps_per_round + j)
        gen_records.append(record)

    eval_record, report = evaluate_round(gen, disc, task, cfg, rng, round_index)
    return RoundResult(
        round_index=round_index,
        gen=gen,
        disc=disc,
        negatives=fake,
        disc_records=disc_records,
        gen_records=gen_records,
        eval_record=eval_record,
        collapse=report,
    )


@dataclass
class LoopResult:
    gen: GenModel
    disc: DiscModel
    rounds: list = field(default_factory=list)

    @property
    def collapsed_rounds(self) -> list[int]:
        return [r.round_index for r in self.rounds if r.collapse.flagged]


def run_rlgaf(
    gen: GenModel,
    disc: DiscModel,
    task,
    cfg: LoopConfig,
    trainer: GeneratorTrainer,
    rng: np.random.Generator,
    log: Optional[MetricsLog] = None,
    on_round: Optional[Callable[[RoundResult], None]] = None,
) -> LoopResult:
    """Run ``total_rounds`` rounds, logging every record as it is produced.

    With ``halt_on_collapse`` a flagged round raises ModeCollapseError
    after its records are written.
    """
    cfg.validate()
    if trainer.strategy != cfg.strategy:
        raise InvalidInputError(
            f"trainer strategy {trainer.strategy!r} differs from loop strategy {cfg.strategy!r}"
        )
    trainer.validate()
    message = cfg.regularization_warning()
    if message:
        warnings.warn(message, RegularizationWarning, stacklevel=2)

    disc_optimizer = cfg.make_disc_optimizer()
    pretrain_discriminator(gen, disc, task, cfg, rng, log, disc_optimizer)
    result = LoopResult(gen, disc)
    for round_index in range(cfg.total_rounds):
        outcome = rlgaf_round(gen, disc, task, cfg, trainer, rng, round_index, disc_optimizer)
        gen, disc = outcome.gen, outcome.disc
        if log is not None:
            for record in outcome.disc_records + outcome.gen_records + [outcome.eval_record]:
                log.append(record)
        result.rounds.append(outcome)
        result.gen, result.disc = gen, disc
        if on_round is not None:
            on_round(outcome)
        if outcome.collapse.flagged and cfg.halt_on_collapse:
            raise ModeCollapseError(
                f"round {round_index}: " + "; ".join(outcome.collapse.reasons),
                outcome.collapse,
            )
    return result
