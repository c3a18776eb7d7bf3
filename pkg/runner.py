"""
Run Orchestration
=================

A run is fully described by a RunConfig: one JSON object, nested by
concern (task, model, pretrain, sft, reinforce, ppo, gumbel, loop, judge).
Loading is fail-closed: unknown keys and wrongly typed values are rejected
with the offending field path; missing keys take their defaults. The
completed config is written to ``<output_dir>/run_config.json`` before any
training and is never rewritten afterwards.

Every random draw descends from ``seed`` through named substreams, so two
runs of the same config on the same platform write identical metrics and
checkpoints.
"""

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

import progress
from adversarial_loop import (
    ADVERSARIAL_STRATEGIES,
    GeneratorTrainer,
    LoopConfig,
    LoopResult,
    run_rlgaf,
)
from checkpoint import load_discriminator, load_generator, save_checkpoint
from discriminator import DiscModel, copy_backbone, init_disc_model
from errors import ConfigError, InvalidInputError
from evaluation import (
    HISTOGRAM_BY_TIER,
    RatingRecord,
    aggregate,
    evaluation_prompts,
    histogram,
    load_ratings,
    oracle_share,
    rate_system,
    save_ratings,
)
from gumbel_path import GumbelConfig
from judge_client import JudgeClient, RetryConfig, judge_cases, load_cases
from metrics import MetricsLog
from ppo_trainer import PPOConfig
from prompts import get_judge_rubric, load_exemplars
from reinforce_trainer import ReinforceConfig
from rlgaf_config import (
    ARCH_RECURRENT,
    BASE_GENERATOR_CHECKPOINT,
    DEFAULT_CORPUS_SIZE,
    DEFAULT_DISC_INIT,
    DEFAULT_EMBED_DIM,
    DEFAULT_FORM_MAX_LEN,
    DEFAULT_HIDDEN_DIM,
    DEFAULT_INIT_SCALE,
    DEFAULT_JUDGE_AUTH_HEADER,
    DEFAULT_JUDGE_RETRY_LIMIT,
    DEFAULT_JUDGE_TIMEOUT_SECONDS,
    DEFAULT_MAX_PROMPT_LEN,
    DEFAULT_MAX_PROMPT_TOKENS,
    DEFAULT_MAX_RESPONSE_LEN,
    DEFAULT_OUTPUT_DIR,
    DEFAULT_PRETRAIN_BATCH,
    DEFAULT_PRETRAIN_LR,
    DEFAULT_PRETRAIN_STEPS,
    DEFAULT_SENTIMENT_SET_SIZE,
    DEFAULT_TEMPERATURE,
    DEFAULT_VOCAB_SIZE,
    DISC_INIT_GENERATOR,
    DISC_INITS,
    DISCRIMINATOR_CHECKPOINT,
    GENERATOR_CHECKPOINT,
    METRICS_FILE,
    RUN_CONFIG_FILE,
    get_judge_endpoint,
    get_judge_token,
)
from seeding import (
    STREAM_DISC_INIT,
    STREAM_EVAL,
    STREAM_GUMBEL_NOISE,
    STREAM_MODEL_INIT,
    STREAM_PRETRAIN,
    STREAM_SAMPLING,
    stream,
)
from seqmodel import GenModel, greedy_decode, init_gen_model, sample_batch
from tasks import corpus_nll, form_task, load_corpus, pretrain_generator, sentiment_task, sft_generator


STRATEGY_SFT = "sft"
STRATEGIES = ADVERSARIAL_STRATEGIES + (STRATEGY_SFT,)
TASK_NAMES = ("sentiment", "form")
MODE_ADVERSARIAL = "adversarial"
MODE_GENERATOR = "generator"

# Prompt count used when reporting the oracle share after training
SUMMARY_SAMPLES = 200


@dataclass
class TaskConfig:
    name: str = "sentiment"
    vocab_size: int = DEFAULT_VOCAB_SIZE
    corpus_size: int = DEFAULT_CORPUS_SIZE
    p_set_size: int = DEFAULT_SENTIMENT_SET_SIZE
    n_set_size: int = DEFAULT_SENTIMENT_SET_SIZE
    max_phrase_len: int = DEFAULT_FORM_MAX_LEN
    corpus_path: Optional[str] = None
    max_prompt_tokens: int = DEFAULT_MAX_PROMPT_TOKENS


@dataclass
class ModelConfig:
    architecture: str = ARCH_RECURRENT
    embed_dim: int = DEFAULT_EMBED_DIM
    hidden_dim: int = DEFAULT_HIDDEN_DIM
    max_response_len: int = DEFAULT_MAX_RESPONSE_LEN
    max_prompt_len: int = DEFAULT_MAX_PROMPT_LEN
    init_scale: float = DEFAULT_INIT_SCALE
    temperature: float = DEFAULT_TEMPERATURE
    disc_embed_dim: int = DEFAULT_EMBED_DIM
    disc_hidden_dim: int = DEFAULT_HIDDEN_DIM
    disc_init: str = DEFAULT_DISC_INIT


@dataclass
class MLEConfig:
    """Maximum-likelihood schedule shared by pretraining and SFT."""

    steps: int = DEFAULT_PRETRAIN_STEPS
    lr: float = DEFAULT_PRETRAIN_LR
    batch_size: int = DEFAULT_PRETRAIN_BATCH


@dataclass
class JudgeConfig:
    endpoint: Optional[str] = None
    auth_header: str = DEFAULT_JUDGE_AUTH_HEADER
    timeout: float = DEFAULT_JUDGE_TIMEOUT_SECONDS
    retry_limit: int = DEFAULT_JUDGE_RETRY_LIMIT


@dataclass
class RunConfig:
    seed: int = 0
    strategy: str = "ppo"
    output_dir: str = DEFAULT_OUTPUT_DIR
    workers: int = 1
    task: TaskConfig = field(default_factory=TaskConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: MLEConfig = field(default_factory=MLEConfig)
    sft: MLEConfig = field(default_factory=lambda: MLEConfig(steps=500))
    reinforce: ReinforceConfig = field(default_factory=ReinforceConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    gumbel: GumbelConfig = field(default_factory=GumbelConfig)
    loop: LoopConfig = field(default_factory=LoopConfig)
    judge: JudgeConfig = field(default_factory=JudgeConfig)

    @property
    def run_dir(self) -> Path:
        return Path(self.output_dir)


# Config (de)serialization

def config_to_dict(cfg: RunConfig) -> dict:
    return asdict(cfg)


def _check_value(value, default, path: str):
    """Type-check a scalar against the type of its default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true or false, got {value!r}")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    elif isinstance(default, str) or default is None:
        if not (value is None and default is None) and not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
    return value


def _from_dict(template, data, path: str):
    """Overlay ``data`` on the dataclass instance ``template``."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a JSON object")
    known = {f.name for f in fields(template)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{path + '.' if path else ''}{unknown[0]}: unknown key")
    values = {}
    for name, value in data.items():
        default = getattr(template, name)
        field_path = f"{path}.{name}" if path else name
        if is_dataclass(default):
            values[name] = _from_dict(default, value, field_path)
        else:
            values[name] = _check_value(value, default, field_path)
    return replace(template, **values)


def config_from_dict(data: dict) -> RunConfig:
    """Build a RunConfig, rejecting unknown keys at every level."""
    cfg = _from_dict(RunConfig(), data, "")
    loop_strategy = data.get("loop", {}).get("strategy")
    if (
        loop_strategy is not None
        and cfg.strategy in ADVERSARIAL_STRATEGIES
        and loop_strategy != cfg.strategy
    ):
        raise ConfigError(
            f"loop.strategy: {loop_strategy!r} disagrees with strategy {cfg.strategy!r}"
        )
    return normalize_config(cfg)


def normalize_config(cfg: RunConfig) -> RunConfig:
    """Propagate shared settings (strategy, workers) into the nested configs."""
    loop = cfg.loop
    if cfg.strategy in ADVERSARIAL_STRATEGIES:
        loop = replace(loop, strategy=cfg.strategy)
    return replace(
        cfg,
        loop=loop,
        reinforce=replace(cfg.reinforce, workers=cfg.workers),
        ppo=replace(cfg.ppo, workers=cfg.workers),
    )


def validate_config(cfg: RunConfig) -> None:
    """Check every section; errors name the section they came from."""
    if cfg.seed < 0:
        raise ConfigError(f"seed: must be >= 0, got {cfg.seed}")
    if cfg.strategy not in STRATEGIES:
        raise ConfigError(f"strategy: must be one of {STRATEGIES}, got {cfg.strategy!r}")
    if cfg.task.name not in TASK_NAMES:
        raise ConfigError(f"task.name: must be one of {TASK_NAMES}, got {cfg.task.name!r}")
    if cfg.workers < 1:
        raise ConfigError(f"workers: must be >= 1, got {cfg.workers}")
    m = cfg.model
    if m.disc_init not in DISC_INITS:
        raise ConfigError(f"model.disc_init: must be one of {DISC_INITS}, got {m.disc_init!r}")
    if m.disc_init == DISC_INIT_GENERATOR and (
        (m.disc_embed_dim, m.disc_hidden_dim) != (m.embed_dim, m.hidden_dim)
    ):
        raise ConfigError(
            "model.disc_init: copying the generator backbone needs disc_embed_dim and "
            "disc_hidden_dim equal to embed_dim and hidden_dim"
        )
    sections = [("reinforce", cfg.reinforce), ("ppo", cfg.ppo), ("gumbel", cfg.gumbel)]
    if cfg.strategy in ADVERSARIAL_STRATEGIES:
        sections.append(("loop", cfg.loop))
    for name, section in sections:
        try:
            section.validate()
        except InvalidInputError as e:
            raise ConfigError(f"{name}: {e}")


def default_config() -> RunConfig:
    return normalize_config(RunConfig())


def load_config(path: Path) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}")
    cfg = config_from_dict(data)
    validate_config(cfg)
    return cfg


def save_config(cfg: RunConfig, path: Path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2) + "\n", encoding="utf-8")


def persist_config(cfg: RunConfig) -> Path:
    """Write run_config.json once; a different existing config is an error."""
    cfg.run_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.run_dir / RUN_CONFIG_FILE
    if path.exists():
        existing = json.loads(path.read_text(encoding="utf-8"))
        if existing != json.loads(json.dumps(config_to_dict(cfg))):
            raise ConfigError(
                f"{path}: a different config was already recorded for this output directory"
            )
        return path
    save_config(cfg, path)
    return path


def apply_overrides(
    cfg: RunConfig,
    lr: Optional[float] = None,
    seed: Optional[int] = None,
    output_dir: Optional[str] = None,
    command: str = "train",
) -> RunConfig:
    """Command-line overrides; ``lr`` targets the schedule the command trains."""
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if output_dir is not None:
        cfg = replace(cfg, output_dir=str(output_dir))
    if lr is not None:
        if command == "pretrain":
            cfg = replace(cfg, pretrain=replace(cfg.pretrain, lr=lr))
        elif cfg.strategy == STRATEGY_SFT:
            cfg = replace(cfg, sft=replace(cfg.sft, lr=lr))
        else:
            section = getattr(cfg, cfg.strategy)
            cfg = replace(cfg, **{cfg.strategy: replace(section, lr=lr)})
    validate_config(cfg)
    return cfg


# Construction

def build_task(cfg: RunConfig):
    t = cfg.task
    if t.name == "form":
        task = form_task(
            cfg.seed, t.vocab_size, t.max_phrase_len, cfg.model.max_response_len, t.corpus_size
        )
    else:
        task = sentiment_task(
            cfg.seed, t.vocab_size, t.p_set_size, t.n_set_size,
            cfg.model.max_response_len, t.corpus_size,
        )
    if t.corpus_path:
        loaded = load_corpus(Path(t.corpus_path), t.max_prompt_tokens)
        if loaded.dropped:
            progress.print_warning(
                f"Dropped {loaded.dropped} corpus records with prompts of "
                f">= {t.max_prompt_tokens} tokens"
            )
        task = task.with_corpus(loaded.demonstrations)
    return task


def build_generator(cfg: RunConfig) -> GenModel:
    m = cfg.model
    return init_gen_model(
        stream(cfg.seed, STREAM_MODEL_INIT),
        vocab_size=cfg.task.vocab_size,
        embed_dim=m.embed_dim,
        hidden_dim=m.hidden_dim,
        max_response_len=m.max_response_len,
        architecture=m.architecture,
        max_prompt_len=m.max_prompt_len,
        init_scale=m.init_scale,
        temperature=m.temperature,
    )


def build_discriminator(cfg: RunConfig, gen: Optional[GenModel] = None) -> DiscModel:
    """A fresh discriminator; with disc_init "generator" its backbone starts from ``gen``."""
    m = cfg.model
    from_generator = gen is not None and m.disc_init == DISC_INIT_GENERATOR
    disc = init_disc_model(
        stream(cfg.seed, STREAM_DISC_INIT),
        vocab_size=cfg.task.vocab_size,
        embed_dim=m.disc_embed_dim,
        hidden_dim=m.disc_hidden_dim,
        max_positions=m.max_prompt_len + m.max_response_len,
        architecture=m.architecture,
        init_scale=m.init_scale,
        zero_head=from_generator,
    )
    if from_generator:
        copy_backbone(disc, gen)
    return disc


def build_trainer(cfg: RunConfig) -> GeneratorTrainer:
    return GeneratorTrainer(
        strategy=cfg.strategy,
        reinforce=cfg.reinforce,
        ppo=cfg.ppo,
        gumbel=cfg.gumbel,
        noise_rng=stream(cfg.seed, STREAM_GUMBEL_NOISE),
    )


def _check_compatible(gen: GenModel, cfg: RunConfig) -> None:
    if gen.vocab_size != cfg.task.vocab_size:
        raise ConfigError(
            f"task.vocab_size: {cfg.task.vocab_size} does not match checkpoint vocabulary "
            f"{gen.vocab_size}"
        )


# Commands

def run_pretrain(cfg: RunConfig) -> Path:
    """MLE-pretrain a fresh generator on the task corpus; returns the base checkpoint."""
    validate_config(cfg)
    persist_config(cfg)
    progress.print_run_header("pretrain", cfg.strategy, cfg.seed, cfg.run_dir)
    task = build_task(cfg)
    gen = build_generator(cfg)
    rng = stream(cfg.seed, STREAM_PRETRAIN)
    measured = [demo.sequence for demo in task.corpus[:200]]
    start_nll = corpus_nll(gen, measured)
    log = MetricsLog(cfg.run_dir / METRICS_FILE)
    pretrain_generator(gen, task, cfg.pretrain.steps, cfg.pretrain.lr, rng, cfg.pretrain.batch_size, log)
    path = cfg.run_dir / BASE_GENERATOR_CHECKPOINT
    save_checkpoint(gen, path, cfg.seed)
    progress.print_pretrain_summary(cfg.pretrain.steps, start_nll, corpus_nll(gen, measured), path)
    return path


@dataclass
class TrainResult:
    gen: GenModel
    disc: Optional[DiscModel]
    loop: Optional[LoopResult]
    generator_path: Path


def _train_generator_only(
    gen: GenModel,
    disc: DiscModel,
    task,
    cfg: RunConfig,
    rng: np.random.Generator,
    log: MetricsLog,
) -> GenModel:
    """Generator updates against a frozen discriminator."""
    trainer = build_trainer(cfg)
    trainer.validate()
    for step in range(cfg.loop.gen_steps_per_round * cfg.loop.total_rounds):
        gen, record = trainer.step(gen, disc, task, rng, step)
        log.append(record)
    return gen


def run_train(
    cfg: RunConfig,
    init_checkpoint: Optional[Path] = None,
    mode: str = MODE_ADVERSARIAL,
    disc_checkpoint: Optional[Path] = None,
) -> TrainResult:
    validate_config(cfg)
    if mode not in (MODE_ADVERSARIAL, MODE_GENERATOR):
        raise InvalidInputError(f"mode must be adversarial or generator, got {mode!r}")
    persist_config(cfg)
    progress.print_run_header("train", cfg.strategy, cfg.seed, cfg.run_dir)

    task = build_task(cfg)
    gen = load_generator(init_checkpoint) if init_checkpoint else build_generator(cfg)
    _check_compatible(gen, cfg)
    rng = stream(cfg.seed, STREAM_SAMPLING)
    log = MetricsLog(cfg.run_dir / METRICS_FILE)

    disc = None
    loop_result = None
    if cfg.strategy == STRATEGY_SFT:
        sft_generator(gen, task, cfg.sft.steps, cfg.sft.lr, rng, cfg.sft.batch_size, log)
    else:
        disc = load_discriminator(disc_checkpoint) if disc_checkpoint else build_discriminator(cfg, gen)
        if mode == MODE_ADVERSARIAL:
            message = cfg.loop.regularization_warning()
            if message:
                progress.print_warning(message)
            loop_result = run_rlgaf(
                gen, disc, task, cfg.loop, build_trainer(cfg), rng, log,
                on_round=progress.print_round_summary,
            )
            gen, disc = loop_result.gen, loop_result.disc
        else:
            gen = _train_generator_only(gen, disc, task, cfg, rng, log)
        save_checkpoint(disc, cfg.run_dir / DISCRIMINATOR_CHECKPOINT, cfg.seed)

    path = cfg.run_dir / GENERATOR_CHECKPOINT
    save_checkpoint(gen, path, cfg.seed)

    summary_rng = stream(cfg.seed, STREAM_EVAL)
    summary_prompts = task.sample_prompts(SUMMARY_SAMPLES, summary_rng)
    share = oracle_share(task, sample_batch(gen, summary_prompts, summary_rng))
    progress.print_train_summary(
        len(loop_result.rounds) if loop_result else 0,
        loop_result.collapsed_rounds if loop_result else [],
        share,
        task.target_label.value,
        path,
    )
    return TrainResult(gen, disc, loop_result, path)


def run_sample(
    cfg: RunConfig, checkpoint: Path, count: int, out: Path, greedy: bool = False
) -> list:
    """Decode ``count`` prompts and write them in corpus format."""
    if count < 1:
        raise InvalidInputError(f"sample count must be >= 1, got {count}")
    task = build_task(cfg)
    gen = load_generator(checkpoint)
    _check_compatible(gen, cfg)
    rng = stream(cfg.seed, STREAM_SAMPLING)
    prompts = task.sample_prompts(count, rng)
    if greedy:
        sequences = [greedy_decode(gen, p) for p in prompts]
    else:
        sequences = sample_batch(gen, prompts, rng, cfg.workers)
    with open(out, "w", encoding="utf-8", newline="\n") as f:
        for seq in sequences:
            f.write(",".join(map(str, seq.prompt)) + " " + ",".join(map(str, seq.response)) + "\n")
    return sequences


def run_evaluate(
    cfg: RunConfig,
    systems: dict[str, Path],
    base_id: str,
    count: int,
    out: Path,
) -> dict[str, int]:
    """Greedy-decode every system on one prompt set, rate with the oracle, compare to base."""
    if base_id not in systems:
        raise InvalidInputError(f"base system {base_id!r} is not among {sorted(systems)}")
    task = build_task(cfg)
    prompts = evaluation_prompts(task, count, cfg.seed)
    records: list[RatingRecord] = []
    for system_id, checkpoint in systems.items():
        gen = load_generator(checkpoint)
        _check_compatible(gen, cfg)
        records.extend(rate_system(gen, task, system_id, prompts))
    save_ratings(records, out)
    scores = {
        system_id: aggregate(records, system_id, base_id)
        for system_id in systems
        if system_id != base_id
    }
    progress.print_evaluation_summary(base_id, scores, histogram(records, HISTOGRAM_BY_TIER))
    return scores


def run_score(ratings_path: Path, system_id: str, base_id: str, by: Optional[str] = None):
    """(aggregate improvement, histogram rows or None)."""
    records = load_ratings(ratings_path)
    score = aggregate(records, system_id, base_id)
    rows = histogram(records, by, system_id, base_id) if by else None
    return score, rows


def judge_client_for(cfg: RunConfig, transport=None, sleep=None) -> JudgeClient:
    endpoint = cfg.judge.endpoint or get_judge_endpoint()
    if not endpoint:
        raise ConfigError("judge.endpoint: not set (or export RLGAF_JUDGE_ENDPOINT)")
    kwargs = {"transport": transport}
    if sleep is not None:
        kwargs["sleep"] = sleep
    return JudgeClient(
        endpoint=endpoint,
        token=get_judge_token(),
        auth_header=cfg.judge.auth_header,
        timeout=cfg.judge.timeout,
        retry=RetryConfig(retry_limit=cfg.judge.retry_limit),
        **kwargs,
    )


def run_judge(cfg: RunConfig, cases_path: Path, out: Path, client: Optional[JudgeClient] = None) -> list:
    client = client or judge_client_for(cfg)
    cases = load_cases(cases_path)
    records = judge_cases(
        client, get_judge_rubric(), load_exemplars(), cases, cfg.task.vocab_size - 1
    )
    save_ratings(records, out)
    return records

