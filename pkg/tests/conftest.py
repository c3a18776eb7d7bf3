"""Shared fixtures: tiny models and helpers small enough for exhaustive checks."""

import itertools
import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

import runner
from discriminator import init_disc_model
from seqmodel import Sequence, init_gen_model
from tasks import OracleLabel


def make_gen(
    seed=0,
    vocab_size=3,
    embed_dim=2,
    hidden_dim=3,
    max_response_len=2,
    has_terminator=False,
    init_scale=0.5,
    architecture="recurrent",
    max_prompt_len=4,
):
    rng = None if seed is None else np.random.default_rng(seed)
    return init_gen_model(
        rng,
        vocab_size=vocab_size,
        embed_dim=embed_dim,
        hidden_dim=hidden_dim,
        max_response_len=max_response_len,
        architecture=architecture,
        max_prompt_len=max_prompt_len,
        init_scale=init_scale,
        has_terminator=has_terminator,
    )


def make_disc(seed=1, vocab_size=3, embed_dim=2, hidden_dim=3, init_scale=0.5, **kwargs):
    rng = None if seed is None else np.random.default_rng(seed)
    return init_disc_model(
        rng,
        vocab_size=vocab_size,
        embed_dim=embed_dim,
        hidden_dim=hidden_dim,
        init_scale=init_scale,
        **kwargs,
    )


def saturate(gen, token, margin=1e6):
    """Make ``token`` the overwhelming choice at every step."""
    gen.params["w_vocab"][...] = 0.0
    gen.params["b_vocab"][...] = 0.0
    gen.params["b_vocab"][token] = margin
    return gen


def all_responses(vocab_size, length):
    return list(itertools.product(range(vocab_size), repeat=length))


class ConstantTask:
    """Minimal task stand-in: fixed prompts, fixed expert response."""

    def __init__(self, vocab_size=3, prompt=(0,), expert=(1, 1), target="positive"):
        self.vocab_size = vocab_size
        self.prompt = tuple(prompt)
        self.expert = tuple(expert)
        self.target_label = OracleLabel(target)

    def sample_prompts(self, n, rng):
        return [self.prompt for _ in range(n)]

    def expert_batch(self, n, rng):
        return [Sequence(self.prompt, self.expert) for _ in range(n)]

    def pretrain_batch(self, n, rng):
        return self.expert_batch(n, rng)

    def oracle(self, seq):
        return OracleLabel.POSITIVE if seq.response == self.expert else OracleLabel.NEGATIVE


def tiny_run_config(output_dir, **top):
    """A sentiment run small enough to pretrain, train and evaluate in seconds."""
    data = {
        "seed": 7,
        "output_dir": str(output_dir),
        "task": {"vocab_size": 12, "p_set_size": 2, "n_set_size": 2, "corpus_size": 40},
        "model": {
            "embed_dim": 4, "hidden_dim": 6, "max_response_len": 6, "max_prompt_len": 4,
            "disc_embed_dim": 4, "disc_hidden_dim": 6,
        },
        "pretrain": {"steps": 3, "batch_size": 4},
        "sft": {"steps": 3, "batch_size": 4},
        "reinforce": {"batch_size": 2},
        "ppo": {"batch_size": 2, "ppo_epochs": 1},
        "gumbel": {"batch_size": 2},
        "loop": {
            "total_rounds": 1, "gen_steps_per_round": 2, "disc_samples_per_round": 4,
            "eval_samples": 4, "collapse_samples": 20,
        },
    }
    data.update(top)
    cfg = runner.config_from_dict(data)
    runner.validate_config(cfg)
    return cfg


@pytest.fixture
def tiny_gen():
    return make_gen()


@pytest.fixture
def tiny_disc():
    return make_disc()


@pytest.fixture
def uniform_gen():
    return make_gen(seed=None)


@pytest.fixture
def constant_task():
    return ConstantTask()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
