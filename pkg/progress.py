"""
Progress Reporting Utilities
============================

Console output for training and evaluation runs: run headers, one summary
line per adversarial round, warnings, and end-of-run summaries. Machine-
readable progress goes to the metrics JSONL file; this module is for people
watching the terminal.
"""

from pathlib import Path
from typing import Optional

from adversarial_loop import CollapseReport, RoundResult


def format_score(value: int) -> str:
    """Signed integer score, e.g. '+1', '0', '-2'."""
    return f"{value:+d}" if value != 0 else "0"


def format_optional(value: Optional[float], digits: int = 3) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


def print_run_header(command: str, strategy: str, seed: int, output_dir: Path) -> None:
    """Print a formatted header for the run."""
    print("\n" + "=" * 70)
    print(f"  {command.upper()}: strategy={strategy} seed={seed}")
    print(f"  Output: {output_dir}")
    print("=" * 70)
    print()


def print_warning(message: str) -> None:
    print(f"  ⚠️  {message}")


def print_collapse_warning(round_index: int, report: CollapseReport) -> None:
    print_warning(f"Mode collapse flagged in round {round_index}:")
    for reason in report.reasons:
        print(f"     - {reason}")
    print(f"     Most frequent response: {report.top_response} ({report.top_share:.0%})")


def print_round_summary(result: RoundResult) -> None:
    """One line per round: discriminator losses, generator reward, held-out accuracy."""
    disc = result.disc_records[-1] if result.disc_records else None
    rewards = [r.reward_mean for r in result.gen_records if r.reward_mean is not None]
    kls = [r.kl_mean for r in result.gen_records if r.kl_mean is not None]
    reward = sum(rewards) / len(rewards) if rewards else None
    kl = sum(kls) / len(kls) if kls else None

    line = f"  Round {result.round_index:4d} |"
    if disc is not None:
        line += (
            f" d_real {format_optional(disc.loss_d_real)}"
            f" d_fake {format_optional(disc.loss_d_fake)} |"
        )
    line += f" reward {format_optional(reward)}"
    if kl is not None:
        line += f" kl {format_optional(kl, 4)}"
    line += f" | acc {format_optional(result.eval_record.disc_acc, 2)}"
    print(line)

    if result.collapse.flagged:
        print_collapse_warning(result.round_index, result.collapse)


def print_pretrain_summary(steps: int, start_nll: float, end_nll: float, checkpoint: Path) -> None:
    print("\n" + "-" * 70)
    print("  PRETRAINING SUMMARY")
    print("-" * 70)
    print(f"  Steps:       {steps}")
    print(f"  Corpus NLL:  {start_nll:.4f} -> {end_nll:.4f} (per token)")
    print(f"  Checkpoint:  {checkpoint}")
    print("-" * 70)


def print_train_summary(
    rounds: int,
    collapsed_rounds: list[int],
    oracle_share: float,
    target: str,
    checkpoint: Path,
) -> None:
    print("\n" + "-" * 70)
    print("  TRAINING SUMMARY")
    print("-" * 70)
    print(f"  Rounds:      {rounds}")
    if collapsed_rounds:
        shown = ", ".join(str(r) for r in collapsed_rounds[:5])
        more = f" (+{len(collapsed_rounds) - 5} more)" if len(collapsed_rounds) > 5 else ""
        print(f"  Collapse:    flagged in rounds {shown}{more}")
    else:
        print("  Collapse:    never flagged")
    print(f"  Oracle:      {oracle_share:.0%} of samples {target}")
    print(f"  Checkpoint:  {checkpoint}")
    print("-" * 70)


def print_evaluation_summary(
    base_id: str,
    scores: dict[str, int],
    tier_rows: list[tuple],
) -> None:
    """Improvement of every system over the base, then tier counts per system."""
    print("\n" + "-" * 70)
    print(f"  IMPROVEMENT OVER {base_id}")
    print("-" * 70)
    for system_id, score in scores.items():
        print(f"  {system_id:<20} {format_score(score)}")
    print()
    print("  Tier counts:")
    for (system_id, tier), count in tier_rows:
        print(f"    {system_id:<18} {tier.value:<8} {count}")
    print("-" * 70)
