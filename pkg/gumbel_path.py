"""
Gumbel-Softmax Path
===================

Fully differentiable generator training. The generator emits relaxed
one-hot tokens softmax((logits + g) / τ) with standard Gumbel noise g;
they are fed back into the generator and into the discriminator through a
matrix-multiply embedding instead of a lookup, so the discriminator's BCE
toward "real" back-propagates all the way into the generator.

Known to collapse when the discriminator is much stronger than the
generator; the mode-collapse detector is the way to observe it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

import diffcore as dc
from diffcore import Tensor
from discriminator import DiscModel, score_inputs
from errors import InvalidInputError, TrainingDivergenceError
from metrics import MetricsRecord
from rlgaf_config import (
    DEFAULT_GUMBEL_BATCH,
    DEFAULT_GUMBEL_LR,
    DEFAULT_GUMBEL_TAU,
    GUMBEL_ANNEAL_RATE,
    GUMBEL_MIN_TAU,
)
from seeding import split
from seqmodel import GenModel, backbone_step, check_tokens, encode, head_logits


@dataclass
class GumbelConfig:
    tau: float = DEFAULT_GUMBEL_TAU
    straight_through: bool = False
    lr: float = DEFAULT_GUMBEL_LR
    steps: int = 100
    batch_size: int = DEFAULT_GUMBEL_BATCH
    anneal: bool = False
    anneal_rate: float = GUMBEL_ANNEAL_RATE
    min_tau: float = GUMBEL_MIN_TAU

    def validate(self) -> None:
        _check_tau(self.tau)
        if not np.isfinite(self.lr) or self.lr < 0:
            raise InvalidInputError(f"learning rate must be finite and non-negative, got {self.lr}")
        if self.batch_size < 1 or self.steps < 0:
            raise InvalidInputError("batch_size must be >= 1 and steps >= 0")
        if not 0 < self.anneal_rate <= 1:
            raise InvalidInputError(f"anneal_rate must lie in (0, 1], got {self.anneal_rate}")

    def tau_at(self, step: int) -> float:
        """Temperature after ``step`` geometric annealing steps (floored at min_tau)."""
        if not self.anneal:
            return self.tau
        return max(self.tau * self.anneal_rate ** step, self.min_tau)


def _check_tau(tau: float) -> None:
    if not np.isfinite(tau) or tau <= 0:
        raise InvalidInputError(f"temperature must be finite and positive, got {tau}")


@dataclass
class RelaxedToken:
    """Relaxed one-hot weights over the vocabulary, kept as a graph node."""

    weights: Tensor

    def __post_init__(self):
        if not isinstance(self.weights, Tensor):
            self.weights = dc.as_tensor(self.weights)
        data = self.weights.data
        if data.ndim != 1:
            raise InvalidInputError("relaxed token weights must be a vector")
        if abs(float(data.sum()) - 1.0) > 1e-9 or np.any(data < 0) or np.any(data > 1):
            raise InvalidInputError("relaxed token weights must form a distribution")

    @property
    def values(self) -> np.ndarray:
        return self.weights.data

    def argmax(self) -> int:
        return int(np.argmax(self.weights.data))


def exact_onehot(token: int, vocab_size: int) -> RelaxedToken:
    check_tokens([token], vocab_size)
    return RelaxedToken(Tensor(np.eye(vocab_size)[token]))


def sample_gumbel_noise(size: int, rng: np.random.Generator) -> np.ndarray:
    return rng.gumbel(0.0, 1.0, size=size)


def relax(logits, noise: np.ndarray, tau: float, straight_through: bool = False) -> RelaxedToken:
    """softmax((logits + noise) / τ) for a fixed noise draw."""
    _check_tau(tau)
    soft = dc.softmax(dc.mul(dc.add(logits, noise), 1.0 / tau))
    if straight_through:
        return RelaxedToken(dc.straight_through(soft))
    return RelaxedToken(soft)


def gumbel_softmax_sample(
    logits,
    tau: float,
    rng: np.random.Generator,
    straight_through: bool = False,
) -> RelaxedToken:
    _check_tau(tau)
    logits = dc.as_tensor(logits)
    if logits.data.ndim != 1 or not np.all(np.isfinite(logits.data)):
        raise InvalidInputError("logits must be a finite vector")
    return relax(logits, sample_gumbel_noise(logits.data.shape[0], rng), tau, straight_through)


def onehot_embed(relaxed, embedding) -> Tensor:
    """weights · embedding; an exact one-hot for k gives row k of the embedding."""
    weights = relaxed.weights if isinstance(relaxed, RelaxedToken) else relaxed
    return dc.onehot_matmul(weights, embedding)


def relaxed_response(
    gen: GenModel,
    weights: dict[str, Tensor],
    prompt: tuple,
    noise: np.ndarray,
    tau: float,
    straight_through: bool = False,
    stop_on_terminator: bool = True,
) -> list[RelaxedToken]:
    """Generate up to L relaxed tokens, feeding each back as the next input.

    ``noise`` holds one Gumbel draw per position (shape L × V). Generation
    stops after a token whose argmax is the terminator unless
    ``stop_on_terminator`` is off, which keeps the length fixed.
    """
    check_tokens(prompt, gen.vocab_size)
    cursor, _ = encode(weights, gen.architecture, prompt)
    tokens = []
    for t in range(gen.max_response_len):
        logits = head_logits(weights, cursor.hidden)
        if gen.temperature != 1.0:
            logits = dc.mul(logits, 1.0 / gen.temperature)
        token = relax(logits, noise[t], tau, straight_through)
        tokens.append(token)
        if stop_on_terminator and token.argmax() == gen.terminator:
            break
        cursor = backbone_step(weights, gen.architecture, cursor, token.weights)
    return tokens


def relaxed_score(disc: DiscModel, prompt: tuple, response: list[RelaxedToken]) -> Tensor:
    """Discriminator score with the prompt as exact one-hots; disc weights are constants."""
    prompt_inputs = [exact_onehot(t, disc.vocab_size).weights for t in prompt]
    return score_inputs(
        disc, disc.params.constants(), prompt_inputs, [token.weights for token in response]
    )


def relaxed_loss(
    gen: GenModel,
    weights: dict[str, Tensor],
    disc: DiscModel,
    prompts: list[tuple],
    noises: list[np.ndarray],
    tau: float,
    straight_through: bool = False,
    stop_on_terminator: bool = True,
) -> Tensor:
    """Mean BCE of the relaxed responses toward label 1 under frozen noise."""
    if disc.vocab_size != gen.vocab_size:
        raise InvalidInputError(
            f"discriminator vocabulary {disc.vocab_size} differs from generator {gen.vocab_size}"
        )
    losses = []
    for prompt, noise in zip(prompts, noises):
        response = relaxed_response(
            gen, weights, prompt, noise, tau, straight_through, stop_on_terminator
        )
        losses.append(dc.bce_with_logits(relaxed_score(disc, prompt, response), 1))
    return dc.mean_of(losses)


def draw_noises(gen: GenModel, count: int, rng: np.random.Generator) -> list[np.ndarray]:
    shape = (gen.max_response_len, gen.vocab_size)
    return [child.gumbel(0.0, 1.0, size=shape) for child in split(rng, count)]


def gumbel_generator_step(
    gen: GenModel,
    disc: DiscModel,
    task,
    cfg: GumbelConfig,
    rng: np.random.Generator,
    step: int = 0,
    noise_rng: Optional[np.random.Generator] = None,
) -> tuple[GenModel, MetricsRecord]:
    """One descent step on the relaxed BCE; only generator params change.

    Prompts come from ``rng``. Gumbel noise comes from ``noise_rng`` when
    given, so the noise sequence does not shift with prompt sampling.
    """
    cfg.validate()
    prompts = task.sample_prompts(cfg.batch_size, rng)
    noises = draw_noises(gen, len(prompts), rng if noise_rng is None else noise_rng)
    tau = cfg.tau_at(step)
    leaves = gen.params.track()
    loss = relaxed_loss(gen, leaves, disc, prompts, noises, tau, cfg.straight_through)
    grads = dc.backward(loss, leaves)
    if not grads.is_finite():
        raise TrainingDivergenceError(f"non-finite relaxed gradient in {grads.first_non_finite()}")
    gen.params.apply_update(grads, -cfg.lr)
    record = MetricsRecord(step=step, phase="gen", loss_g=loss.item(), reward_mean=_mean_reward(loss))
    return gen, record


def _mean_reward(loss: Tensor) -> Optional[float]:
    # exp(-mean BCE) is the geometric mean of σ(score) over the batch
    return float(np.exp(-loss.item()))
