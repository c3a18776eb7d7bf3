"""
Sequence Model
==============

The generator policy: a tiny autoregressive model giving a categorical
distribution over the vocabulary for every prefix, with sampling, greedy
decoding and exact log-probabilities.

Two backbones are available, both shared with the discriminator:
- recurrent: embedding -> tanh recurrent cell
- attention: embedding + position -> one single-head attention block

Inputs to the backbone are either token ids (embedding lookup) or relaxed
one-hot weight vectors (embedding matrix multiply), which is what lets the
Gumbel-Softmax path differentiate through discrete tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Union

import numpy as np

import diffcore as dc
from diffcore import ParamStore, Tensor
from errors import InvalidInputError, InvalidTokenError
from rlgaf_config import (
    ARCH_ATTENTION,
    ARCH_RECURRENT,
    DEFAULT_EMBED_DIM,
    DEFAULT_HIDDEN_DIM,
    DEFAULT_INIT_SCALE,
    DEFAULT_MAX_PROMPT_LEN,
    DEFAULT_MAX_RESPONSE_LEN,
    DEFAULT_TEMPERATURE,
    DEFAULT_VOCAB_SIZE,
)
from seeding import ordered_map, split


TokenInput = Union[int, Tensor]


@dataclass(frozen=True)
class Sequence:
    """A prompt x and a response y = (a_0 .. a_{T-1})."""

    prompt: tuple = ()
    response: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "prompt", tuple(int(t) for t in self.prompt))
        object.__setattr__(self, "response", tuple(int(t) for t in self.response))

    def prefix(self, t: int) -> tuple:
        """The state s_t: prompt followed by the first t response tokens."""
        return self.prompt + self.response[:t]

    def tokens(self) -> tuple:
        return self.prompt + self.response

    def with_response(self, response: Iterable[int]) -> "Sequence":
        return Sequence(self.prompt, tuple(response))


def check_tokens(tokens: Iterable[int], vocab_size: int) -> None:
    for token in tokens:
        if not 0 <= int(token) < vocab_size:
            raise InvalidTokenError(f"token id {token} outside vocabulary of size {vocab_size}")


# Backbone shared by the generator and the discriminator

def backbone_shapes(
    architecture: str,
    vocab_size: int,
    embed_dim: int,
    hidden_dim: int,
    max_positions: int,
) -> dict[str, tuple]:
    if architecture == ARCH_RECURRENT:
        return {
            "embed": (vocab_size, embed_dim),
            "w_in": (hidden_dim, embed_dim),
            "w_rec": (hidden_dim, hidden_dim),
            "b_h": (hidden_dim,),
        }
    if architecture == ARCH_ATTENTION:
        return {
            "embed": (vocab_size, embed_dim),
            "pos": (max_positions, embed_dim),
            "w_q": (embed_dim, embed_dim),
            "w_k": (embed_dim, embed_dim),
            "w_v": (embed_dim, embed_dim),
            "w_in": (hidden_dim, embed_dim),
            "w_out": (hidden_dim, embed_dim),
            "b_h": (hidden_dim,),
        }
    raise InvalidInputError(f"unknown architecture {architecture!r}")


def init_params(shapes: dict[str, tuple], rng: np.random.Generator, scale: float) -> ParamStore:
    """Uniform(-scale, scale) initialization in name order."""
    return ParamStore({
        name: rng.uniform(-scale, scale, size=shape) for name, shape in shapes.items()
    })


@dataclass(frozen=True)
class Cursor:
    """Backbone state after consuming some inputs."""

    position: int = 0
    hidden: Optional[Tensor] = None
    keys: tuple = ()
    values: tuple = ()


def embed_input(weights: dict[str, Tensor], token: TokenInput) -> Tensor:
    if isinstance(token, Tensor):
        return dc.onehot_matmul(token, weights["embed"])
    return dc.embedding_lookup(weights["embed"], int(token))


def backbone_step(
    weights: dict[str, Tensor],
    architecture: str,
    cursor: Cursor,
    token: TokenInput,
) -> Cursor:
    x = embed_input(weights, token)
    if architecture == ARCH_RECURRENT:
        z = dc.add(dc.matmul(weights["w_in"], x), weights["b_h"])
        if cursor.hidden is not None:
            z = dc.add(z, dc.matmul(weights["w_rec"], cursor.hidden))
        return Cursor(cursor.position + 1, dc.tanh(z))

    max_positions = weights["pos"].data.shape[0]
    if cursor.position >= max_positions:
        raise InvalidInputError(f"sequence longer than {max_positions} positions")
    x = dc.add(x, dc.embedding_lookup(weights["pos"], cursor.position))
    query = dc.matmul(weights["w_q"], x)
    keys = cursor.keys + (dc.matmul(weights["w_k"], x),)
    values = cursor.values + (dc.matmul(weights["w_v"], x),)
    scale = 1.0 / math.sqrt(x.data.shape[0])
    scores = dc.mul(dc.concat([dc.matmul(query, k) for k in keys]), scale)
    attended = dc.matmul(dc.softmax(scores), dc.stack(values))
    z = dc.add(
        dc.add(dc.matmul(weights["w_in"], x), dc.matmul(weights["w_out"], attended)),
        weights["b_h"],
    )
    return Cursor(cursor.position + 1, dc.tanh(z), keys, values)


def encode(
    weights: dict[str, Tensor],
    architecture: str,
    inputs: Iterable[TokenInput],
    cursor: Optional[Cursor] = None,
) -> tuple[Cursor, list[Tensor]]:
    """Run the backbone over ``inputs``; return the final cursor and every hidden state."""
    cursor = cursor or Cursor()
    hiddens = []
    for token in inputs:
        cursor = backbone_step(weights, architecture, cursor, token)
        hiddens.append(cursor.hidden)
    return cursor, hiddens


# Generator

@dataclass
class GenModel:
    vocab_size: int
    embed_dim: int
    hidden_dim: int
    max_response_len: int
    params: ParamStore
    architecture: str = ARCH_RECURRENT
    max_prompt_len: int = DEFAULT_MAX_PROMPT_LEN
    has_terminator: bool = True
    temperature: float = DEFAULT_TEMPERATURE

    @property
    def terminator(self) -> Optional[int]:
        return self.vocab_size - 1 if self.has_terminator else None

    @property
    def max_positions(self) -> int:
        return self.max_prompt_len + self.max_response_len


def generator_shapes(
    architecture: str, vocab_size: int, embed_dim: int, hidden_dim: int, max_positions: int
) -> dict[str, tuple]:
    shapes = backbone_shapes(architecture, vocab_size, embed_dim, hidden_dim, max_positions)
    shapes["w_vocab"] = (vocab_size, hidden_dim)
    shapes["b_vocab"] = (vocab_size,)
    return shapes


def init_gen_model(
    rng: Optional[np.random.Generator],
    vocab_size: int = DEFAULT_VOCAB_SIZE,
    embed_dim: int = DEFAULT_EMBED_DIM,
    hidden_dim: int = DEFAULT_HIDDEN_DIM,
    max_response_len: int = DEFAULT_MAX_RESPONSE_LEN,
    architecture: str = ARCH_RECURRENT,
    max_prompt_len: int = DEFAULT_MAX_PROMPT_LEN,
    init_scale: float = DEFAULT_INIT_SCALE,
    has_terminator: bool = True,
    temperature: float = DEFAULT_TEMPERATURE,
) -> GenModel:
    """Build a generator; ``rng=None`` gives all-zero parameters."""
    if vocab_size < 2 or embed_dim < 1 or hidden_dim < 1 or max_response_len < 1:
        raise InvalidInputError("model dimensions must be positive (vocabulary >= 2)")
    if temperature <= 0:
        raise InvalidInputError(f"temperature must be positive, got {temperature}")
    shapes = generator_shapes(
        architecture, vocab_size, embed_dim, hidden_dim, max_prompt_len + max_response_len
    )
    if rng is None:
        params = ParamStore({name: np.zeros(shape) for name, shape in shapes.items()})
    else:
        params = init_params(shapes, rng, init_scale)
    return GenModel(
        vocab_size=vocab_size,
        embed_dim=embed_dim,
        hidden_dim=hidden_dim,
        max_response_len=max_response_len,
        params=params,
        architecture=architecture,
        max_prompt_len=max_prompt_len,
        has_terminator=has_terminator,
        temperature=temperature,
    )


def with_params(model: GenModel, params: ParamStore) -> GenModel:
    if not model.params.congruent(params):
        raise InvalidInputError("replacement parameters are not congruent with the model")
    return replace(model, params=params)


def head_logits(weights: dict[str, Tensor], hidden: Optional[Tensor]) -> Tensor:
    if hidden is None:
        return weights["b_vocab"]
    return dc.add(dc.matmul(weights["w_vocab"], hidden), weights["b_vocab"])


def _check_prefix(model: GenModel, tokens: tuple) -> None:
    check_tokens(tokens, model.vocab_size)
    if len(tokens) > model.max_positions:
        raise InvalidInputError(
            f"prefix of {len(tokens)} tokens exceeds {model.max_positions} positions"
        )


def _check_sequence(model: GenModel, seq: Sequence) -> None:
    if len(seq.response) > model.max_response_len:
        raise InvalidInputError(
            f"response of {len(seq.response)} tokens exceeds limit {model.max_response_len}"
        )
    _check_prefix(model, seq.tokens())


def next_token_logits(model: GenModel, prefix: Iterable[int]) -> np.ndarray:
    tokens = tuple(int(t) for t in prefix)
    _check_prefix(model, tokens)
    weights = model.params.constants()
    cursor, _ = encode(weights, model.architecture, tokens)
    return head_logits(weights, cursor.hidden).data.copy()


def step_log_probs(model: GenModel, weights: dict[str, Tensor], seq: Sequence) -> list[Tensor]:
    """log π(a_t | s_t) for every response position, as graph nodes."""
    _check_sequence(model, seq)
    cursor, _ = encode(weights, model.architecture, seq.prompt)
    terms = []
    for token in seq.response:
        logits = head_logits(weights, cursor.hidden)
        if model.temperature != 1.0:
            logits = dc.mul(logits, 1.0 / model.temperature)
        terms.append(dc.pick(dc.log_softmax(logits), token))
        cursor = backbone_step(weights, model.architecture, cursor, token)
    return terms


def log_prob_tensor(model: GenModel, weights: dict[str, Tensor], seq: Sequence) -> Tensor:
    terms = step_log_probs(model, weights, seq)
    if not terms:
        return Tensor(0.0)
    return dc.add_all(terms)


def log_prob(model: GenModel, seq: Sequence) -> float:
    return log_prob_tensor(model, model.params.constants(), seq).item()


def _probabilities(model: GenModel, logits: Tensor) -> np.ndarray:
    if model.temperature != 1.0:
        logits = dc.mul(logits, 1.0 / model.temperature)
    return dc.softmax(logits).data


def _draw(probs: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(probs)
    index = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(index, probs.shape[0] - 1)


def complete(model: GenModel, partial: Sequence, rng: np.random.Generator) -> Sequence:
    """Continue ``partial`` by ancestral sampling until the terminator or L tokens."""
    _check_sequence(model, partial)
    weights = model.params.constants()
    cursor, _ = encode(weights, model.architecture, partial.tokens())
    response = list(partial.response)
    if response and response[-1] == model.terminator:
        return partial
    while len(response) < model.max_response_len:
        token = _draw(_probabilities(model, head_logits(weights, cursor.hidden)), rng)
        response.append(token)
        if token == model.terminator:
            break
        cursor = backbone_step(weights, model.architecture, cursor, token)
    return Sequence(partial.prompt, tuple(response))


def sample_response(model: GenModel, prompt: Iterable[int], rng: np.random.Generator) -> Sequence:
    return complete(model, Sequence(tuple(prompt)), rng)


def greedy_decode(model: GenModel, prompt: Iterable[int]) -> Sequence:
    """Argmax per step; ties go to the lowest token id."""
    prompt = tuple(int(t) for t in prompt)
    _check_prefix(model, prompt)
    weights = model.params.constants()
    cursor, _ = encode(weights, model.architecture, prompt)
    response = []
    while len(response) < model.max_response_len:
        token = int(np.argmax(head_logits(weights, cursor.hidden).data))
        response.append(token)
        if token == model.terminator:
            break
        cursor = backbone_step(weights, model.architecture, cursor, token)
    return Sequence(prompt, tuple(response))


def sample_batch(
    model: GenModel,
    prompts: list[tuple],
    rng: np.random.Generator,
    workers: int = 1,
) -> list[Sequence]:
    """Sample one response per prompt on split streams; order is fixed by prompt index."""
    streams = split(rng, len(prompts))
    return ordered_map(lambda pair: sample_response(model, *pair), list(zip(prompts, streams)), workers)
