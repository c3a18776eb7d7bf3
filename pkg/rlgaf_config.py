"""
RLGAF Configuration
===================

Configuration constants shared across the trainers, the adversarial loop
and the runner. Per-run values live in a RunConfig JSON file (see runner.py);
these are the defaults it falls back to.
"""

import os
from typing import Optional

# Environment variables (optional; only the judge subcommand needs them).
# Read at call time so a .env loaded by the CLI is seen.
JUDGE_ENDPOINT_VAR = "RLGAF_JUDGE_ENDPOINT"
JUDGE_TOKEN_VAR = "RLGAF_JUDGE_TOKEN"


def get_judge_endpoint() -> Optional[str]:
    return os.environ.get(JUDGE_ENDPOINT_VAR)


def get_judge_token() -> Optional[str]:
    return os.environ.get(JUDGE_TOKEN_VAR)


# Model sizes for the synthetic tasks
DEFAULT_VOCAB_SIZE = 32
DEFAULT_EMBED_DIM = 16
DEFAULT_HIDDEN_DIM = 32
DEFAULT_MAX_RESPONSE_LEN = 16
DEFAULT_MAX_PROMPT_LEN = 8
DEFAULT_INIT_SCALE = 0.1
DEFAULT_TEMPERATURE = 1.0

ARCH_RECURRENT = "recurrent"
ARCH_ATTENTION = "attention"

# Any parameter magnitude above this aborts training
DIVERGENCE_GUARD = 1e6

# Discriminator
DEFAULT_DISC_LR = 1e-2
DISC_OPTIMIZER_ADAM = "adam"
DISC_OPTIMIZER_SGD = "sgd"
DISC_OPTIMIZERS = (DISC_OPTIMIZER_ADAM, DISC_OPTIMIZER_SGD)
DEFAULT_DISC_OPTIMIZER = DISC_OPTIMIZER_ADAM
# Where a fresh discriminator's backbone weights come from
DISC_INIT_GENERATOR = "generator"
DISC_INIT_RANDOM = "random"
DISC_INITS = (DISC_INIT_GENERATOR, DISC_INIT_RANDOM)
DEFAULT_DISC_INIT = DISC_INIT_GENERATOR

# Reward modes (shared by REINFORCE and PPO)
REWARD_RAW = "raw"
REWARD_SIGMOID = "sigmoid"
REWARD_NORMALIZED = "normalized"
REWARD_MODES = (REWARD_RAW, REWARD_SIGMOID, REWARD_NORMALIZED)
DEFAULT_REWARD_MODE = REWARD_SIGMOID

# REINFORCE
DEFAULT_REINFORCE_BATCH = 8
DEFAULT_ROLLOUT_COUNT = 0  # terminal-reward-only
DEFAULT_REINFORCE_LR = 0.1

# PPO
DEFAULT_PPO_BETA = 0.1
DEFAULT_PPO_GAMMA = 0.0
DEFAULT_PPO_CLIP_EPS = 0.2
DEFAULT_PPO_EPOCHS = 4
DEFAULT_PPO_BATCH = 8
DEFAULT_PPO_LR = 0.1
BASELINE_DECAY = 0.95

# Gumbel-Softmax path
DEFAULT_GUMBEL_TAU = 1.0
GUMBEL_ANNEAL_RATE = 0.995
GUMBEL_MIN_TAU = 0.05
DEFAULT_GUMBEL_LR = 0.05
DEFAULT_GUMBEL_BATCH = 4

# Adversarial loop (1:10 discriminator regularization ratio)
DEFAULT_DISC_STEPS_PER_ROUND = 1
DEFAULT_GEN_STEPS_PER_ROUND = 10
DEFAULT_DISC_SAMPLES_PER_ROUND = 16
DEFAULT_TOTAL_ROUNDS = 50
DEFAULT_SMOOTHING_WINDOW = 100
DEFAULT_EVAL_SAMPLES = 100
DEFAULT_COLLAPSE_SAMPLES = 100

# Mode-collapse thresholds
DISTINCT_RATIO_MIN = 0.1
BIGRAM_ENTROPY_MIN = 1.0  # nats
MAX_SINGLE_RESPONSE_SHARE = 0.5
MIN_COLLAPSE_SAMPLES = 20

# Tasks
DEFAULT_FORM_MAX_LEN = 3
DEFAULT_SENTIMENT_SET_SIZE = 8
DEFAULT_CORPUS_SIZE = 2000
DEFAULT_MAX_PROMPT_TOKENS = 1000
SENTIMENT_PROMPT_TOKENS = 3

# Pretraining (maximum likelihood)
DEFAULT_PRETRAIN_STEPS = 2000
DEFAULT_PRETRAIN_LR = 0.5
DEFAULT_PRETRAIN_BATCH = 16

# Judge transport
DEFAULT_JUDGE_TIMEOUT_SECONDS = 30.0
DEFAULT_JUDGE_AUTH_HEADER = "Authorization"
DEFAULT_JUDGE_RETRY_LIMIT = 3
JUDGE_BACKOFF_BASE_SECONDS = 1.0
JUDGE_BACKOFF_FACTOR = 2.0

# Checkpoint format
CHECKPOINT_MAGIC = b"RLGF"
CHECKPOINT_VERSION = 1

# Files inside a run's output directory
RUN_CONFIG_FILE = "run_config.json"
METRICS_FILE = "metrics.jsonl"
GENERATOR_CHECKPOINT = "generator.ckpt"
BASE_GENERATOR_CHECKPOINT = "generator_base.ckpt"
DISCRIMINATOR_CHECKPOINT = "discriminator.ckpt"
DEFAULT_OUTPUT_DIR = "runs/default"
