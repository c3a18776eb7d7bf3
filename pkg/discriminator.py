"""
Discriminator
=============

A classifier on the generator's backbone that scores (prompt, response)
pairs. σ(score) is read as the probability that the pair is a real expert
demonstration, and is the reward signal for the generator.

The sequence is pooled by averaging the hidden states at response
positions; prompt positions only provide context. Inputs are token ids
or, on the Gumbel path, relaxed one-hot vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

import diffcore as dc
from diffcore import ParamStore, Tensor
from errors import InvalidInputError
from rlgaf_config import (
    ARCH_RECURRENT,
    DEFAULT_EMBED_DIM,
    DEFAULT_HIDDEN_DIM,
    DEFAULT_INIT_SCALE,
    DEFAULT_VOCAB_SIZE,
)
from seqmodel import (
    GenModel,
    Sequence,
    TokenInput,
    backbone_shapes,
    check_tokens,
    encode,
    init_params,
)


@dataclass
class DiscModel:
    vocab_size: int
    embed_dim: int
    hidden_dim: int
    params: ParamStore
    architecture: str = ARCH_RECURRENT
    max_positions: int = 24


def discriminator_shapes(
    architecture: str, vocab_size: int, embed_dim: int, hidden_dim: int, max_positions: int
) -> dict[str, tuple]:
    shapes = backbone_shapes(architecture, vocab_size, embed_dim, hidden_dim, max_positions)
    shapes["w_score"] = (hidden_dim,)
    shapes["b_score"] = (1,)
    return shapes


def init_disc_model(
    rng: Optional[np.random.Generator],
    vocab_size: int = DEFAULT_VOCAB_SIZE,
    embed_dim: int = DEFAULT_EMBED_DIM,
    hidden_dim: int = DEFAULT_HIDDEN_DIM,
    max_positions: int = 24,
    architecture: str = ARCH_RECURRENT,
    init_scale: float = DEFAULT_INIT_SCALE,
    zero_head: bool = False,
) -> DiscModel:
    shapes = discriminator_shapes(architecture, vocab_size, embed_dim, hidden_dim, max_positions)
    if rng is None:
        params = ParamStore({name: np.zeros(shape) for name, shape in shapes.items()})
    else:
        params = init_params(shapes, rng, init_scale)
    if zero_head:
        params["w_score"][...] = 0.0
        params["b_score"][...] = 0.0
    return DiscModel(
        vocab_size=vocab_size,
        embed_dim=embed_dim,
        hidden_dim=hidden_dim,
        params=params,
        architecture=architecture,
        max_positions=max_positions,
    )


def copy_backbone(disc: DiscModel, gen: GenModel) -> DiscModel:
    """Start the discriminator's backbone from a generator's current weights.

    Values are copied, not shared: later updates to either model leave the
    other untouched. The scoring head keeps its own initialization.
    """
    if disc.architecture != gen.architecture:
        raise InvalidInputError(
            f"cannot copy a {gen.architecture} backbone into a {disc.architecture} discriminator"
        )
    shapes = backbone_shapes(
        disc.architecture, disc.vocab_size, disc.embed_dim, disc.hidden_dim, disc.max_positions
    )
    for name, shape in shapes.items():
        if name not in gen.params or gen.params.shape(name) != shape:
            raise InvalidInputError(
                f"generator backbone entry {name!r} does not match discriminator shape {shape}"
            )
    for name in shapes:
        disc.params[name][...] = gen.params[name]
    return disc


@dataclass
class LabeledBatch:
    """(sequence, label) pairs; 1 = expert demonstration, 0 = generated.

    ``provenance`` records the round whose generator produced the
    negatives, or None for expert data.
    """

    items: list
    provenance: Optional[int] = None

    def __post_init__(self):
        if not self.items:
            raise InvalidInputError("a labeled batch must not be empty")
        for _, label in self.items:
            if label not in (0, 1):
                raise InvalidInputError(f"labels must be 0 or 1, got {label!r}")

    @classmethod
    def of(cls, sequences: list, label: int, provenance: Optional[int] = None) -> "LabeledBatch":
        return cls([(seq, label) for seq in sequences], provenance)

    @property
    def sequences(self) -> list:
        return [seq for seq, _ in self.items]

    def __len__(self) -> int:
        return len(self.items)


def score_inputs(
    disc: DiscModel,
    weights: dict[str, Tensor],
    prompt: list,
    response: list,
) -> Tensor:
    """Score from backbone inputs (token ids or relaxed one-hot vectors)."""
    total = len(prompt) + len(response)
    if total > disc.max_positions and disc.architecture != ARCH_RECURRENT:
        raise InvalidInputError(f"sequence of {total} tokens exceeds {disc.max_positions} positions")
    _, hiddens = encode(weights, disc.architecture, list(prompt) + list(response))
    pooled_states = hiddens[len(prompt):] or hiddens[-1:]
    if pooled_states:
        pooled = dc.mean_of(pooled_states)
    else:
        pooled = Tensor(np.zeros(disc.hidden_dim))
    return dc.add(dc.matmul(weights["w_score"], pooled), dc.pick(weights["b_score"], 0))


def score_tensor(disc: DiscModel, weights: dict[str, Tensor], seq: Sequence) -> Tensor:
    check_tokens(seq.tokens(), disc.vocab_size)
    inputs: list[TokenInput] = list(seq.prompt)
    return score_inputs(disc, weights, inputs, list(seq.response))


def score(disc: DiscModel, seq: Sequence) -> float:
    return score_tensor(disc, disc.params.constants(), seq).item()


def prob_real(disc: DiscModel, seq: Sequence) -> float:
    return dc.sigmoid_value(score(disc, seq))


def disc_loss_tensors(
    disc: DiscModel,
    weights: dict[str, Tensor],
    real_batch: LabeledBatch,
    fake_batch: LabeledBatch,
) -> tuple[Tensor, Tensor, Tensor]:
    if not real_batch.items or not fake_batch.items:
        raise InvalidInputError("discriminator loss needs non-empty real and fake batches")
    real_loss = dc.mean_of([
        dc.bce_with_logits(score_tensor(disc, weights, seq), 1) for seq in real_batch.sequences
    ])
    fake_loss = dc.mean_of([
        dc.bce_with_logits(score_tensor(disc, weights, seq), 0) for seq in fake_batch.sequences
    ])
    total = dc.mul(dc.add(real_loss, fake_loss), 0.5)
    return total, real_loss, fake_loss


def disc_loss(
    disc: DiscModel, real_batch: LabeledBatch, fake_batch: LabeledBatch
) -> tuple[float, float, float]:
    """(loss_total, loss_d_real, loss_d_fake)."""
    total, real_loss, fake_loss = disc_loss_tensors(
        disc, disc.params.constants(), real_batch, fake_batch
    )
    return total.item(), real_loss.item(), fake_loss.item()


def disc_train_step(
    disc: DiscModel,
    real_batch: LabeledBatch,
    fake_batch: LabeledBatch,
    lr: float,
    optimizer: Optional[dc.Adam] = None,
) -> tuple[float, float, float]:
    """One descent step on loss_total; returns the pre-step losses.

    Without ``optimizer`` this is plain gradient descent at ``lr``; with
    one, the optimizer's own learning rate and moments apply. The fake
    batch holds plain token ids, so nothing links it back to the
    generator's parameters.
    """
    if lr < 0:
        raise InvalidInputError(f"learning rate must be non-negative, got {lr}")
    leaves = disc.params.track()
    total, real_loss, fake_loss = disc_loss_tensors(disc, leaves, real_batch, fake_batch)
    grads = dc.backward(total, leaves)
    if optimizer is None:
        disc.params.apply_update(grads, -lr)
    else:
        optimizer.step(disc.params, grads)
    return total.item(), real_loss.item(), fake_loss.item()


def disc_update(
    disc: DiscModel, real_batch: LabeledBatch, fake_batch: LabeledBatch, lr: float
) -> DiscModel:
    disc_train_step(disc, real_batch, fake_batch, lr)
    return disc


def accuracy(disc: DiscModel, batch: LabeledBatch) -> float:
    """Share of items where σ(score) > 0.5 agrees with the label (0.5 predicts 0)."""
    weights = disc.params.constants()
    hits = 0
    for seq, label in batch.items:
        probability = dc.sigmoid_value(score_tensor(disc, weights, seq).item())
        predicted = 1 if probability > 0.5 else 0
        hits += int(predicted == label)
    return hits / len(batch.items)
