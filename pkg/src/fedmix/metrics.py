"""Evaluation, transfer-payload accounting and metrics history CSVs."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from enum import Enum
from pathlib import Path

import numpy as np

from fedmix.model import ArchSpec, ExampleSet, ModelParams, as_example_set, predict_proba

BYTES_PER_VALUE = 8


class Strategy(str, Enum):
    NO_MIX = "no_mix"
    PARALLEL = "parallel"
    EXAMPLE_TRANSFER = "example_transfer"
    GRADIENT_TRANSFER = "gradient_transfer"
    ORACLE = "oracle"
    FINE_TUNE = "fine_tune"

    @classmethod
    def parse(cls, name: "str | Strategy") -> "Strategy":
        if isinstance(name, Strategy):
            return name
        try:
            return cls(name.replace("-", "_"))
        except ValueError:
            valid = ", ".join(s.value.replace("_", "-") for s in cls)
            raise ValueError(f"unknown scenario {name!r}; expected one of: {valid}") from None

    @property
    def label(self) -> str:
        return self.value.replace("_", "-")


@dataclass(frozen=True)
class RoundRecord:
    """Per-round metrics. Accuracy fields are ``None`` on rounds without evaluation."""

    round: int
    eval_accuracy: float | None
    eval_accuracy_pos: float | None
    eval_accuracy_neg: float | None
    mean_train_loss: float
    bytes_down_per_client: int
    bytes_up_per_client: int
    central_accuracy: float | None = None

    def with_eval(self, overall, pos, neg, central=None) -> "RoundRecord":
        return RoundRecord(
            self.round, overall, pos, neg, self.mean_train_loss,
            self.bytes_down_per_client, self.bytes_up_per_client, central,
        )


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def evaluate(params: ModelParams, eval_data, threshold: float = 0.5):
    """(overall, positive-class recall, negative-class recall) over all eval examples.

    ``eval_data`` may be a FederatedDataset or a flat example collection. A
    per-label accuracy is ``None`` when that label does not occur.
    """
    if hasattr(eval_data, "pooled"):
        eval_data = eval_data.pooled()
    ex = as_example_set(eval_data)
    if len(ex) == 0:
        raise ValueError("evaluation set is empty")
    pred = (predict_proba(params, ex.features) >= threshold).astype(np.int64)
    hit = pred == ex.labels
    pos = ex.labels == 1
    acc_pos = float(hit[pos].mean()) if pos.any() else None
    acc_neg = float(hit[~pos].mean()) if (~pos).any() else None
    return float(hit.mean()), acc_pos, acc_neg


# ---------------------------------------------------------------------------
# Payload
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PayloadModel:
    """Byte sizes: 8 bytes per parameter; 8 per feature plus 1 label byte per example."""

    model_bytes: int
    example_bytes: int

    def __post_init__(self):
        if self.model_bytes < 1 or self.example_bytes < 1:
            raise ValueError("payload sizes must be >= 1")

    @classmethod
    def for_arch(cls, arch: ArchSpec) -> "PayloadModel":
        return cls(arch.param_count * BYTES_PER_VALUE, arch.input_dim * BYTES_PER_VALUE + 1)


def payload_per_round(strategy, pm: PayloadModel, n_transfer: int = 0) -> tuple[int, int]:
    """(bytes down, bytes up) per participating client per round.

    Clients only ever send back their model delta, so the up-link is the
    model size for every strategy.
    """
    strategy = Strategy.parse(strategy)
    if n_transfer < 0:
        raise ValueError("n_transfer must be >= 0")
    down = pm.model_bytes
    if strategy is Strategy.EXAMPLE_TRANSFER:
        down += n_transfer * pm.example_bytes
    elif strategy is Strategy.GRADIENT_TRANSFER:
        down = 2 * pm.model_bytes
    return down, pm.model_bytes


# ---------------------------------------------------------------------------
# History CSV
# ---------------------------------------------------------------------------

HEADER = [
    "round",
    "eval_accuracy",
    "eval_accuracy_pos",
    "eval_accuracy_neg",
    "mean_train_loss",
    "bytes_down_per_client",
    "bytes_up_per_client",
]
CENTRAL_COLUMN = "central_accuracy"

_FLOAT_FIELDS = {f.name for f in fields(RoundRecord)} - {"round", "bytes_down_per_client", "bytes_up_per_client"}


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def write_history(records, path) -> None:
    """Write records as CSV. A trailing ``central_accuracy`` column is added
    only when some record carries one (the fine-tuning baseline)."""
    records = list(records)
    header = list(HEADER)
    if any(r.central_accuracy is not None for r in records):
        header.append(CENTRAL_COLUMN)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for r in records:
            writer.writerow([_fmt(getattr(r, name)) for name in header])


def read_history(path) -> list[RoundRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, expected a header") from None
        if header[: len(HEADER)] != HEADER or header[len(HEADER):] not in ([], [CENTRAL_COLUMN]):
            raise ValueError(f"{path}: unexpected header {header}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            vals = {}
            try:
                for name, cell in zip(header, row):
                    if name in _FLOAT_FIELDS:
                        vals[name] = float(cell) if cell != "" else None
                    else:
                        vals[name] = int(cell)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if vals["mean_train_loss"] is None or not math.isfinite(vals["mean_train_loss"]):
                raise ValueError(f"{path}:{lineno}: mean_train_loss must be a finite number")
            out.append(RoundRecord(**vals))
    return out
