#!/usr/bin/env python3
"""
RLGAF Toolkit Command Line
==========================

Train a small generator against a learned discriminator and score the
result with the three-tier rating pipeline.

Example Usage:
    # Write the default config, pretrain, then fine-tune adversarially
    python rlgaf_cli.py init --out run.json
    python rlgaf_cli.py pretrain --config run.json
    python rlgaf_cli.py train --config run.json --init-checkpoint runs/default/generator_base.ckpt

    # Compare a tuned generator to its base
    python rlgaf_cli.py evaluate --config run.json \\
        --system base=runs/default/generator_base.ckpt \\
        --system tuned=runs/default/generator.ckpt --base base --n 200 --out ratings.jsonl
    python rlgaf_cli.py score --ratings ratings.jsonl --system tuned --base base
"""

import argparse
import sys
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

import runner
from errors import InvalidInputError, RLGAFError, TransportError
from evaluation import HISTOGRAM_BY_IMPROVEMENT, HISTOGRAM_BY_TIER
from progress import format_score


EXIT_OK = 0
EXIT_ERROR = 1


def parse_system(value: str) -> tuple[str, Path]:
    """NAME=CHECKPOINT."""
    name, sep, path = value.partition("=")
    if not sep or not name or not path:
        raise argparse.ArgumentTypeError(f"expected NAME=CHECKPOINT, got {value!r}")
    return name, Path(path)


def _add_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--lr", type=float, default=None, help="Override the learning rate")
    parser.add_argument("--seed", type=int, default=None, help="Override the run seed")
    parser.add_argument("--output-dir", type=str, default=None, help="Override output_dir")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rlgaf_cli.py",
        description="RLGAF toolkit - adversarial feedback fine-tuning at desk scale",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Environment Variables:
  RLGAF_JUDGE_ENDPOINT    Judge URL used when judge.endpoint is unset
  RLGAF_JUDGE_TOKEN       Judge credential sent in judge.auth_header
        """,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    init = sub.add_parser("init", help="Write the default run config")
    init.add_argument("--out", type=Path, required=True)

    pretrain = sub.add_parser("pretrain", help="MLE-pretrain a base generator")
    pretrain.add_argument("--config", type=Path, default=None)
    _add_overrides(pretrain)

    train = sub.add_parser("train", help="Fine-tune with the configured strategy")
    train.add_argument("--config", type=Path, default=None)
    train.add_argument("--init-checkpoint", type=Path, default=None)
    train.add_argument(
        "--mode",
        choices=(runner.MODE_ADVERSARIAL, runner.MODE_GENERATOR),
        default=runner.MODE_ADVERSARIAL,
        help="adversarial runs the full loop; generator trains against a frozen discriminator",
    )
    train.add_argument("--disc-checkpoint", type=Path, default=None)
    _add_overrides(train)

    sample = sub.add_parser("sample", help="Decode responses in corpus format")
    sample.add_argument("--config", type=Path, default=None)
    sample.add_argument("--checkpoint", type=Path, required=True)
    sample.add_argument("--n", type=int, required=True)
    sample.add_argument("--out", type=Path, required=True)
    sample.add_argument("--greedy", action="store_true")

    evaluate = sub.add_parser("evaluate", help="Rate systems with the task oracle")
    evaluate.add_argument("--config", type=Path, default=None)
    evaluate.add_argument(
        "--system", type=parse_system, action="append", required=True, metavar="NAME=CKPT"
    )
    evaluate.add_argument("--base", required=True)
    evaluate.add_argument("--n", type=int, required=True)
    evaluate.add_argument("--out", type=Path, required=True)

    score = sub.add_parser("score", help="Aggregate improvement of a system over a base")
    score.add_argument("--ratings", type=Path, required=True)
    score.add_argument("--system", required=True)
    score.add_argument("--base", required=True)
    score.add_argument(
        "--histogram", choices=(HISTOGRAM_BY_TIER, HISTOGRAM_BY_IMPROVEMENT), default=None
    )

    judge = sub.add_parser("judge", help="Rate a case file with the automated judge")
    judge.add_argument("--config", type=Path, default=None)
    judge.add_argument("--cases", type=Path, required=True)
    judge.add_argument("--out", type=Path, required=True)

    return parser


def _config(args: argparse.Namespace) -> "runner.RunConfig":
    cfg = runner.load_config(args.config) if args.config else runner.default_config()
    if hasattr(args, "lr"):
        cfg = runner.apply_overrides(cfg, args.lr, args.seed, args.output_dir, args.command)
    return cfg


def _print_histogram(rows: list[tuple], by: str) -> None:
    for key, count in rows:
        if by == HISTOGRAM_BY_TIER:
            system_id, tier = key
            print(f"{system_id}\t{tier.value}\t{count}")
        else:
            print(f"{format_score(key)}\t{count}")


def dispatch(args: argparse.Namespace) -> None:
    if args.command == "init":
        runner.save_config(runner.default_config(), args.out)
        print(f"Wrote {args.out}")
    elif args.command == "pretrain":
        runner.run_pretrain(_config(args))
    elif args.command == "train":
        runner.run_train(_config(args), args.init_checkpoint, args.mode, args.disc_checkpoint)
    elif args.command == "sample":
        runner.run_sample(_config(args), args.checkpoint, args.n, args.out, args.greedy)
    elif args.command == "evaluate":
        systems = dict(args.system)
        if len(systems) != len(args.system):
            raise InvalidInputError("each --system name may appear only once")
        runner.run_evaluate(_config(args), systems, args.base, args.n, args.out)
    elif args.command == "score":
        value, rows = runner.run_score(args.ratings, args.system, args.base, args.histogram)
        print(format_score(value))
        if rows is not None:
            _print_histogram(rows, args.histogram)
    elif args.command == "judge":
        records = runner.run_judge(_config(args), args.cases, args.out)
        print(f"Rated {len(records)} cases -> {args.out}")


def main(argv: Optional[list[str]] = None) -> int:
    """Entry point; returns the process exit code."""
    # Load environment variables from .env file if present
    load_dotenv()

    args = build_parser().parse_args(argv)
    try:
        dispatch(args)
    except OSError as e:
        error = TransportError(str(e))
        print(f"error[{error.code}]: {error}", file=sys.stderr)
        return EXIT_ERROR
    except RLGAFError as e:
        print(f"error[{e.code}]: {e}", file=sys.stderr)
        return EXIT_ERROR
    except KeyboardInterrupt:
        print("\n\nInterrupted by user", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
