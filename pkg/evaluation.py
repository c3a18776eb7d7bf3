"""
Evaluation
==========

Three-tier response ratings and the improvement arithmetic built on them.

Every response is rated Good, Average or Bad, scored +1, 0 and -1. A
tuned system's improvement on a prompt is its score minus the base
system's score on the same prompt, so it lies in [-2, 2]. The aggregate
over a prompt set is the sum of per-prompt improvements.

Ratings come from a rater tagged "human", "oracle" (the task's programmatic
labeler) or "judge" (an automated judge endpoint, see judge_client.py) and
persist as JSON lines.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

from errors import IncompletePairError, InvalidInputError
from seeding import STREAM_EVAL, stream
from seqmodel import GenModel, Sequence, greedy_decode, sample_batch


class Tier(str, Enum):
    GOOD = "Good"
    AVERAGE = "Average"
    BAD = "Bad"


TIER_SCORES = {Tier.GOOD: 1, Tier.AVERAGE: 0, Tier.BAD: -1}
TIER_ORDER = (Tier.GOOD, Tier.AVERAGE, Tier.BAD)
RATERS = ("human", "oracle", "judge")

HISTOGRAM_BY_TIER = "tier"
HISTOGRAM_BY_IMPROVEMENT = "improvement"


@dataclass(frozen=True)
class RatingRecord:
    prompt_id: str
    system_id: str
    tier: Tier
    rater: str = "oracle"

    def __post_init__(self):
        object.__setattr__(self, "tier", Tier(self.tier))
        if self.rater not in RATERS:
            raise InvalidInputError(f"rater must be one of {RATERS}, got {self.rater!r}")

    @property
    def key(self) -> tuple:
        return (self.prompt_id, self.system_id, self.rater)

    def to_dict(self) -> dict:
        return {
            "prompt_id": self.prompt_id,
            "system_id": self.system_id,
            "tier": self.tier.value,
            "rater": self.rater,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RatingRecord":
        expected = {"prompt_id", "system_id", "tier", "rater"}
        if set(data) != expected:
            raise InvalidInputError(
                f"rating record fields must be exactly {sorted(expected)}, got {sorted(data)}"
            )
        try:
            return cls(**data)
        except ValueError as e:
            raise InvalidInputError(f"bad rating record {data}: {e}")


def tier_score(tier: Tier) -> int:
    return TIER_SCORES[Tier(tier)]


def improvement(tuned: Optional[Tier], base: Optional[Tier]) -> int:
    """tier_score(tuned) - tier_score(base)."""
    missing = [name for name, tier in (("tuned", tuned), ("base", base)) if tier is None]
    if missing:
        raise IncompletePairError("improvement needs both ratings", missing)
    return tier_score(tuned) - tier_score(base)


def check_unique(records: Iterable[RatingRecord]) -> None:
    seen = set()
    for record in records:
        if record.key in seen:
            raise InvalidInputError(f"duplicate rating for {record.key}")
        seen.add(record.key)


def paired_improvements(
    records: list[RatingRecord], system_id: str, base_id: str
) -> dict[str, int]:
    """Improvement per prompt_id, pairing ratings from the same rater.

    Every prompt rated for either system must be rated for both.
    """
    check_unique(records)
    tuned = {(r.prompt_id, r.rater): r.tier for r in records if r.system_id == system_id}
    base = {(r.prompt_id, r.rater): r.tier for r in records if r.system_id == base_id}
    missing = sorted({prompt for prompt, _ in set(tuned) ^ set(base)})
    if missing:
        raise IncompletePairError(
            f"prompts without both {system_id!r} and {base_id!r} ratings", missing
        )
    if not tuned:
        raise IncompletePairError(f"no shared prompts for {system_id!r} and {base_id!r}", [])
    result: dict[str, int] = {}
    for (prompt, rater), tier in sorted(tuned.items()):
        if prompt in result:
            raise InvalidInputError(f"prompt {prompt!r} rated by more than one rater")
        result[prompt] = improvement(tier, base[(prompt, rater)])
    return result


def aggregate(records: list[RatingRecord], system_id: str, base_id: str) -> int:
    """Sum of improvements over every shared prompt."""
    return sum(paired_improvements(records, system_id, base_id).values())


def histogram(
    records: list[RatingRecord],
    by: str = HISTOGRAM_BY_TIER,
    system_id: Optional[str] = None,
    base_id: Optional[str] = None,
) -> list[tuple]:
    """Counts as rows sorted by key.

    ``by="tier"`` gives ((system_id, tier), count) rows with tiers in
    Good/Average/Bad order; ``by="improvement"`` gives (value, count) rows
    for the system_id vs base_id pairing.
    """
    if by == HISTOGRAM_BY_TIER:
        counts = Counter((r.system_id, r.tier) for r in records)
        return sorted(
            counts.items(), key=lambda item: (item[0][0], TIER_ORDER.index(item[0][1]))
        )
    if by == HISTOGRAM_BY_IMPROVEMENT:
        if system_id is None or base_id is None:
            raise InvalidInputError("an improvement histogram needs system_id and base_id")
        counts = Counter(paired_improvements(records, system_id, base_id).values())
        return sorted(counts.items())
    raise InvalidInputError(f"histogram key must be 'tier' or 'improvement', got {by!r}")


def oracle_rate(task, seq: Sequence) -> Tier:
    """Target label -> Good, unclear -> Average, anything else -> Bad."""
    label = task.oracle(seq)
    if label == task.target_label:
        return Tier.GOOD
    if label.value == "unclear":
        return Tier.AVERAGE
    return Tier.BAD


def evaluation_prompts(task, count: int, seed: int) -> list[tuple]:
    """A fixed prompt set shared by every system under comparison."""
    return task.sample_prompts(count, stream(seed, STREAM_EVAL))


def prompt_id(index: int) -> str:
    return f"p{index:04d}"


def decode_system(
    gen: GenModel, prompts: list[tuple], greedy: bool = True, seed: int = 0
) -> list[Sequence]:
    if greedy:
        return [greedy_decode(gen, p) for p in prompts]
    return sample_batch(gen, prompts, stream(seed, STREAM_EVAL))


def rate_system(
    gen: GenModel,
    task,
    system_id: str,
    prompts: list[tuple],
    greedy: bool = True,
    seed: int = 0,
) -> list[RatingRecord]:
    """Decode every prompt and rate the response with the task oracle."""
    return [
        RatingRecord(prompt_id(i), system_id, oracle_rate(task, seq), "oracle")
        for i, seq in enumerate(decode_system(gen, prompts, greedy, seed))
    ]


def oracle_share(task, sequences: list[Sequence]) -> float:
    """Fraction of sequences the oracle gives the task's target label."""
    if not sequences:
        raise InvalidInputError("oracle_share needs at least one sequence")
    return sum(1 for s in sequences if task.oracle(s) == task.target_label) / len(sequences)


def save_ratings(records: list[RatingRecord], path: Path) -> None:
    check_unique(records)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(json.dumps(record.to_dict()) + "\n")


def load_ratings(path: Path) -> list[RatingRecord]:
    records = []
    with open(path, encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as e:
                raise InvalidInputError(f"{path}: line {line_number}: {e.msg}")
            records.append(RatingRecord.from_dict(data))
    check_unique(records)
    return records
