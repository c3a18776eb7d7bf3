"""
Alignment Tasks
===============

Synthetic environments with a programmatic oracle:

- FormTask: answers should be one short phrase. The expert replies with a
  single content token and the terminator; the pretraining corpus is
  verbose, so a pretrained base model rambles.
- SentimentTask: reviews over a vocabulary split into positive, negative
  and neutral tokens. A review is positive when it holds more positive
  than negative tokens. The corpus mixes positive- and negative-biased
  reviews; the positive ones are the expert demonstrations. Prompts are
  the opening tokens of randomly drawn corpus reviews.

Both tasks reserve the last token id (V-1) as the terminator. Demonstration
corpora can also be loaded from a line-delimited file, one record per line:

    <prompt ids> <response ids>      e.g.  "4,9,2 7,31"
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

import numpy as np

import diffcore as dc
from errors import CorpusParseError, InvalidInputError
from metrics import MetricsLog, MetricsRecord
from rlgaf_config import (
    DEFAULT_CORPUS_SIZE,
    DEFAULT_FORM_MAX_LEN,
    DEFAULT_MAX_PROMPT_LEN,
    DEFAULT_MAX_PROMPT_TOKENS,
    DEFAULT_MAX_RESPONSE_LEN,
    DEFAULT_PRETRAIN_BATCH,
    DEFAULT_SENTIMENT_SET_SIZE,
    DEFAULT_VOCAB_SIZE,
    SENTIMENT_PROMPT_TOKENS,
)
from seeding import STREAM_TASK, stream
from seqmodel import GenModel, Sequence, check_tokens, log_prob, log_prob_tensor


class OracleLabel(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    UNCLEAR = "unclear"
    WELL_FORMED = "well-formed"
    ILL_FORMED = "ill-formed"


@dataclass(frozen=True)
class Demonstration:
    prompt: tuple
    response: tuple
    label: Optional[OracleLabel] = None

    @property
    def sequence(self) -> Sequence:
        return Sequence(self.prompt, self.response)


@dataclass(frozen=True)
class CorpusLoad:
    demonstrations: list
    dropped: int


@dataclass(frozen=True)
class TaskSpec:
    """Prompt sampler, expert demonstrator, oracle and pretraining corpus."""

    name: str
    vocab_size: int
    seed: int
    max_response_len: int = DEFAULT_MAX_RESPONSE_LEN
    max_prompt_len: int = DEFAULT_MAX_PROMPT_LEN
    corpus: tuple = field(default=(), repr=False)

    @property
    def terminator(self) -> int:
        return self.vocab_size - 1

    @property
    def target_label(self) -> OracleLabel:
        raise NotImplementedError

    def sample_prompts(self, count: int, rng: np.random.Generator) -> list[tuple]:
        raise NotImplementedError

    def oracle(self, seq: Sequence) -> OracleLabel:
        raise NotImplementedError

    def expert_batch(self, count: int, rng: np.random.Generator) -> list[Sequence]:
        """Expert (label-1) demonstrations for the discriminator."""
        raise NotImplementedError

    def pretrain_batch(self, count: int, rng: np.random.Generator) -> list[Sequence]:
        """Sequences drawn from the pretraining corpus."""
        if not self.corpus:
            raise InvalidInputError(f"task {self.name!r} has no pretraining corpus")
        picks = rng.integers(0, len(self.corpus), size=count)
        return [self.corpus[int(i)].sequence for i in picks]

    def with_corpus(self, demonstrations: list[Demonstration]) -> "TaskSpec":
        """Replace the generated corpus; missing labels are filled in by the oracle."""
        labeled = []
        for demo in demonstrations:
            if len(demo.prompt) > self.max_prompt_len or len(demo.response) > self.max_response_len:
                raise InvalidInputError(
                    f"corpus record {demo.prompt}/{demo.response} exceeds the task's length limits"
                )
            label = demo.label or self.oracle(demo.sequence)
            labeled.append(replace(demo, label=label))
        return replace(self, corpus=tuple(labeled))


# Form alignment

@dataclass(frozen=True)
class FormTask(TaskSpec):
    max_phrase_len: int = DEFAULT_FORM_MAX_LEN

    @property
    def target_label(self) -> OracleLabel:
        return OracleLabel.WELL_FORMED

    def sample_prompts(self, count: int, rng: np.random.Generator) -> list[tuple]:
        lengths = rng.integers(4, min(8, self.max_prompt_len) + 1, size=count)
        return [
            tuple(int(t) for t in rng.integers(0, self.vocab_size - 1, size=int(n)))
            for n in lengths
        ]

    def expert_response(self, prompt: tuple) -> tuple:
        return (int(prompt[0]), self.terminator)

    def expert_batch(self, count: int, rng: np.random.Generator) -> list[Sequence]:
        return [Sequence(p, self.expert_response(p)) for p in self.sample_prompts(count, rng)]

    def oracle(self, seq: Sequence) -> OracleLabel:
        check_tokens(seq.tokens(), self.vocab_size)
        response = seq.response
        if response and len(response) <= self.max_phrase_len and response[-1] == self.terminator:
            return OracleLabel.WELL_FORMED
        return OracleLabel.ILL_FORMED


def verbose_response(task: FormTask, prompt: tuple, rng: np.random.Generator) -> tuple:
    """A long-winded answer: echoes the prompt then pads with content tokens."""
    length = int(rng.integers(task.max_phrase_len, task.max_response_len))
    body = [prompt[i % len(prompt)] if i < len(prompt) else int(rng.integers(0, task.terminator))
            for i in range(length)]
    return tuple(body) + (task.terminator,)


def form_task(
    seed: int,
    vocab_size: int = DEFAULT_VOCAB_SIZE,
    max_phrase_len: int = DEFAULT_FORM_MAX_LEN,
    max_response_len: int = DEFAULT_MAX_RESPONSE_LEN,
    corpus_size: int = DEFAULT_CORPUS_SIZE,
) -> FormTask:
    if not 2 <= max_phrase_len < max_response_len:
        raise InvalidInputError(
            f"phrase limit must satisfy 2 <= k < {max_response_len}, got {max_phrase_len}"
        )
    if vocab_size < 3:
        raise InvalidInputError("form task needs at least two content tokens and a terminator")
    task = FormTask(
        name="form",
        vocab_size=vocab_size,
        seed=seed,
        max_response_len=max_response_len,
        max_phrase_len=max_phrase_len,
    )
    rng = stream(seed, STREAM_TASK)
    corpus = tuple(
        Demonstration(p, response, task.oracle(Sequence(p, response)))
        for p in task.sample_prompts(corpus_size, rng)
        for response in [verbose_response(task, p, rng)]
    )
    return replace(task, corpus=corpus)


# Sentiment alignment

@dataclass(frozen=True)
class SentimentTask(TaskSpec):
    positive: frozenset = frozenset()
    negative: frozenset = frozenset()
    prompt_tokens: int = SENTIMENT_PROMPT_TOKENS

    def __post_init__(self):
        if self.positive & self.negative:
            raise InvalidInputError(
                f"positive and negative token sets overlap: {sorted(self.positive & self.negative)}"
            )
        if self.terminator in self.positive or self.terminator in self.negative:
            raise InvalidInputError("the terminator cannot carry sentiment")
        if not self.neutral:
            raise InvalidInputError("sentiment task needs at least one neutral token")

    @property
    def neutral(self) -> tuple:
        return tuple(
            t for t in range(self.vocab_size - 1)
            if t not in self.positive and t not in self.negative
        )

    @property
    def target_label(self) -> OracleLabel:
        return OracleLabel.POSITIVE

    def sample_prompts(self, count: int, rng: np.random.Generator) -> list[tuple]:
        """Openings of randomly drawn corpus reviews."""
        if not self.corpus:
            raise InvalidInputError("sentiment prompts are drawn from the corpus, which is empty")
        picks = rng.integers(0, len(self.corpus), size=count)
        return [self.opening(self.corpus[int(i)]) for i in picks]

    def opening(self, demo: Demonstration) -> tuple:
        """First prompt_tokens tokens of the review a demonstration holds."""
        review = [t for t in demo.prompt + demo.response if t != self.terminator]
        return tuple(review[:self.prompt_tokens])

    def oracle(self, seq: Sequence) -> OracleLabel:
        check_tokens(seq.tokens(), self.vocab_size)
        positives = sum(1 for t in seq.response if t in self.positive)
        negatives = sum(1 for t in seq.response if t in self.negative)
        if positives > negatives:
            return OracleLabel.POSITIVE
        if positives < negatives:
            return OracleLabel.NEGATIVE
        return OracleLabel.UNCLEAR

    def demonstrations_of(self, label: OracleLabel) -> list[Demonstration]:
        return [demo for demo in self.corpus if demo.label == label]

    def expert_batch(self, count: int, rng: np.random.Generator) -> list[Sequence]:
        experts = self.demonstrations_of(self.target_label)
        if not experts:
            raise InvalidInputError("corpus holds no positive demonstrations")
        picks = rng.integers(0, len(experts), size=count)
        return [experts[int(i)].sequence for i in picks]


def biased_review(
    task: SentimentTask, favoured: frozenset, opposed: frozenset, rng: np.random.Generator
) -> tuple:
    """Review body leaning toward ``favoured`` tokens, closed by the terminator."""
    pools = [np.array(sorted(favoured)), np.array(sorted(opposed)), np.array(task.neutral)]
    weights = np.array([0.5, 0.1, 0.4])
    length = int(rng.integers(4, task.max_response_len))
    body = []
    for _ in range(length):
        pool = pools[int(rng.choice(3, p=weights))]
        body.append(int(rng.choice(pool)))
    return tuple(body) + (task.terminator,)


def sentiment_task(
    seed: int,
    vocab_size: int = DEFAULT_VOCAB_SIZE,
    p_set_size: int = DEFAULT_SENTIMENT_SET_SIZE,
    n_set_size: int = DEFAULT_SENTIMENT_SET_SIZE,
    max_response_len: int = DEFAULT_MAX_RESPONSE_LEN,
    corpus_size: int = DEFAULT_CORPUS_SIZE,
) -> SentimentTask:
    if p_set_size < 1 or n_set_size < 1:
        raise InvalidInputError("sentiment sets must be non-empty")
    if p_set_size + n_set_size >= vocab_size - 1:
        raise InvalidInputError(
            f"|P| + |N| = {p_set_size + n_set_size} leaves no neutral tokens in V = {vocab_size}"
        )
    if max_response_len < 5:
        raise InvalidInputError("sentiment reviews need a response limit of at least 5")
    rng = stream(seed, STREAM_TASK)
    order = rng.permutation(vocab_size - 1)
    task = SentimentTask(
        name="sentiment",
        vocab_size=vocab_size,
        seed=seed,
        max_response_len=max_response_len,
        positive=frozenset(int(t) for t in order[:p_set_size]),
        negative=frozenset(int(t) for t in order[p_set_size:p_set_size + n_set_size]),
    )
    demos = []
    neutral = np.array(task.neutral)
    for i in range(corpus_size):
        prompt = tuple(int(t) for t in rng.choice(neutral, size=task.prompt_tokens))
        if i % 2 == 0:
            response = biased_review(task, task.positive, task.negative, rng)
        else:
            response = biased_review(task, task.negative, task.positive, rng)
        demos.append(Demonstration(prompt, response, task.oracle(Sequence(prompt, response))))
    return replace(task, corpus=tuple(demos))


# Corpus files

def _parse_ids(text: str, line_number: int) -> tuple:
    try:
        ids = tuple(int(part) for part in text.split(","))
    except ValueError:
        raise CorpusParseError(line_number, f"token list {text!r} is not comma-separated integers")
    if any(t < 0 for t in ids):
        raise CorpusParseError(line_number, "token ids must be non-negative")
    return ids


def load_corpus(path: Path, max_prompt_tokens: int = DEFAULT_MAX_PROMPT_TOKENS) -> CorpusLoad:
    """Read demonstrations; records whose prompt has >= max_prompt_tokens are dropped."""
    demonstrations = []
    dropped = 0
    offset = 0
    with open(path, "rb") as f:
        for line_number, raw in enumerate(f, start=1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CorpusParseError(
                    line_number, f"{path}: invalid UTF-8 at byte {offset + exc.start}"
                ) from exc
            offset += len(raw)
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 2:
                raise CorpusParseError(
                    line_number, f"expected 2 whitespace-separated fields, got {len(fields)}"
                )
            prompt = _parse_ids(fields[0], line_number)
            response = _parse_ids(fields[1], line_number)
            if len(prompt) >= max_prompt_tokens:
                dropped += 1
                continue
            demonstrations.append(Demonstration(prompt, response))
    return CorpusLoad(demonstrations, dropped)


def save_corpus(demonstrations: list[Demonstration], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for demo in demonstrations:
            f.write(",".join(map(str, demo.prompt)) + " " + ",".join(map(str, demo.response)) + "\n")


# Maximum-likelihood training

def corpus_nll(gen: GenModel, sequences: list[Sequence]) -> float:
    """Mean per-token negative log-likelihood of the responses."""
    tokens = sum(len(seq.response) for seq in sequences)
    if tokens == 0:
        raise InvalidInputError("corpus NLL needs at least one response token")
    return -sum(log_prob(gen, seq) for seq in sequences) / tokens


def mle_step(gen: GenModel, batch: list[Sequence], lr: float) -> float:
    """One descent step on per-token cross-entropy; returns the pre-step loss."""
    tokens = sum(len(seq.response) for seq in batch)
    if tokens == 0:
        raise InvalidInputError("maximum-likelihood batch has no response tokens")
    leaves = gen.params.track()
    total = dc.add_all([log_prob_tensor(gen, leaves, seq) for seq in batch])
    loss = dc.mul(total, -1.0 / tokens)
    grads = dc.backward(loss, leaves)
    gen.params.apply_update(grads, -lr)
    return loss.item()


def _train_mle(
    gen: GenModel,
    draw: Callable[[int, np.random.Generator], list[Sequence]],
    steps: int,
    lr: float,
    rng: np.random.Generator,
    batch_size: int,
    log: Optional[MetricsLog],
) -> GenModel:
    if steps < 0 or batch_size < 1:
        raise InvalidInputError("steps must be >= 0 and batch_size >= 1")
    if not np.isfinite(lr) or lr < 0:
        raise InvalidInputError(f"learning rate must be finite and non-negative, got {lr}")
    for step in range(steps):
        loss = mle_step(gen, draw(batch_size, rng), lr)
        if log is not None:
            log.append(MetricsRecord(step=step, phase="pretrain", loss_g=loss))
    return gen


def pretrain_generator(
    gen: GenModel,
    task: TaskSpec,
    steps: int,
    lr: float,
    rng: np.random.Generator,
    batch_size: int = DEFAULT_PRETRAIN_BATCH,
    log: Optional[MetricsLog] = None,
) -> GenModel:
    """Maximum-likelihood training on the task's full (mixed) corpus: the base model."""
    _check_vocab(gen, task)
    return _train_mle(gen, task.pretrain_batch, steps, lr, rng, batch_size, log)


def sft_generator(
    gen: GenModel,
    task: TaskSpec,
    steps: int,
    lr: float,
    rng: np.random.Generator,
    batch_size: int = DEFAULT_PRETRAIN_BATCH,
    log: Optional[MetricsLog] = None,
) -> GenModel:
    """Supervised fine-tuning on the task's expert demonstrations only."""
    _check_vocab(gen, task)
    return _train_mle(gen, task.expert_batch, steps, lr, rng, batch_size, log)


def _check_vocab(gen: GenModel, task: TaskSpec) -> None:
    if gen.vocab_size != task.vocab_size:
        raise InvalidInputError(
            f"generator vocabulary {gen.vocab_size} differs from task vocabulary {task.vocab_size}"
        )
    if not gen.has_terminator:
        raise InvalidInputError("task generators must reserve a terminator token")
