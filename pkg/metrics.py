"""
Metrics Records
===============

Per-step training metrics written as JSON lines, one object per line.
Field names follow the usual GAN loss naming: ``loss_g`` for the
generator, ``loss_d_real`` / ``loss_d_fake`` for the discriminator on
label-1 and label-0 data. Fields a phase does not produce are omitted.
"""

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

from errors import InvalidInputError, TransportError


PHASES = ("disc", "gen", "pretrain", "eval")


@dataclass
class MetricsRecord:
    step: int
    phase: str
    loss_g: Optional[float] = None
    loss_d_real: Optional[float] = None
    loss_d_fake: Optional[float] = None
    reward_mean: Optional[float] = None
    disc_acc: Optional[float] = None
    kl_mean: Optional[float] = None
    collapse_flag: Optional[bool] = None

    def __post_init__(self):
        if self.phase not in PHASES:
            raise InvalidInputError(f"unknown metrics phase {self.phase!r}")

    def to_dict(self) -> dict:
        return {key: value for key, value in asdict(self).items() if value is not None}

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsRecord":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInputError(f"unknown metrics fields: {sorted(unknown)}")
        return cls(**data)


def append_metrics(record: MetricsRecord, path: Path) -> None:
    """Append one record as a single line and flush it."""
    line = json.dumps(record.to_dict()) + "\n"
    try:
        with open(path, "a", encoding="utf-8") as f:
            f.write(line)
            f.flush()
    except OSError as e:
        raise TransportError(f"could not append metrics to {path}: {e}")


def read_metrics(path: Path) -> list[MetricsRecord]:
    records = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                records.append(MetricsRecord.from_dict(json.loads(line)))
    return records


class MetricsLog:
    """Appends records to a JSONL file, keeping steps ordered per phase."""

    def __init__(self, path: Optional[Path]):
        self.path = Path(path) if path is not None else None
        self.records: list[MetricsRecord] = []
        self._last_step: dict[str, int] = {}

    def append(self, record: MetricsRecord) -> None:
        last = self._last_step.get(record.phase)
        if last is not None and record.step < last:
            raise InvalidInputError(
                f"{record.phase} step {record.step} follows step {last}"
            )
        self._last_step[record.phase] = record.step
        self.records.append(record)
        if self.path is not None:
            append_metrics(record, self.path)

    def series(self, field_name: str, phase: Optional[str] = None) -> list[float]:
        return [
            getattr(r, field_name)
            for r in self.records
            if getattr(r, field_name) is not None and (phase is None or r.phase == phase)
        ]
