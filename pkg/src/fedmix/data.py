"""Federated and central datasets, sampling, batching, JSONL I/O and synthetic data.

The synthetic generator mimics a label-skewed deployment: every training
client holds only positive examples (with a per-client mean shift), the
datacenter pool holds only negatives, and held-out evaluation clients hold
both labels in equal numbers.
"""

from __future__ import annotations

import json
import math
from collections.abc import Mapping
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from fedmix.model import ExampleSet, as_example_set
from fedmix.rng import stream

CentralDataset = ExampleSet


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class FederatedDataset(Mapping):
    """Immutable mapping ``client_id -> ExampleSet``, iterated in ascending id order."""

    def __init__(self, clients: Mapping):
        parsed = {}
        dim = None
        for cid, examples in clients.items():
            if not isinstance(cid, str) or not cid:
                raise DataError(f"client id must be a nonempty string, got {cid!r}")
            examples = as_example_set(examples)
            if len(examples) == 0:
                raise DataError(f"client {cid!r} has no examples")
            if dim is None:
                dim = examples.input_dim
            elif examples.input_dim != dim:
                raise DataError(f"client {cid!r} has input_dim {examples.input_dim}, expected {dim}")
            parsed[cid] = examples
        if not parsed:
            raise DataError("federated dataset has no clients")
        self._clients = {cid: parsed[cid] for cid in sorted(parsed)}
        self.input_dim: int = dim

    def __getitem__(self, cid: str) -> ExampleSet:
        return self._clients[cid]

    def __iter__(self):
        return iter(self._clients)

    def __len__(self) -> int:
        return len(self._clients)

    def __repr__(self) -> str:
        return f"FederatedDataset(clients={len(self)}, examples={self.total_examples})"

    @property
    def client_ids(self) -> list[str]:
        return list(self._clients)

    @property
    def total_examples(self) -> int:
        return sum(len(e) for e in self._clients.values())

    def pooled(self) -> ExampleSet:
        """All examples concatenated in client-id order."""
        sets = list(self._clients.values())
        return ExampleSet(
            np.concatenate([s.features for s in sets]), np.concatenate([s.labels for s in sets])
        )

    def subset(self, client_ids) -> "FederatedDataset":
        return FederatedDataset({cid: self._clients[cid] for cid in client_ids})


# ---------------------------------------------------------------------------
# Sampling and batching
# ---------------------------------------------------------------------------


def sample_clients(fed: FederatedDataset, m: int, rng: np.random.Generator) -> list[str]:
    """Uniform sample of ``m`` clients without replacement, sorted by id."""
    n = len(fed)
    if not 1 <= m <= n:
        raise ValueError(f"cannot sample {m} clients from a population of {n}")
    ids = fed.client_ids
    picked = rng.choice(n, size=m, replace=False)
    return sorted(ids[i] for i in picked)


def batches(examples, batch_size: int, rng: np.random.Generator) -> Iterator[ExampleSet]:
    """Endless stream of shuffled mini-batches.

    Each epoch is a fresh permutation cut into consecutive chunks of
    ``batch_size``; the last chunk of an epoch may be short.
    """
    examples = as_example_set(examples)
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = len(examples)
    if n == 0:
        raise ValueError("cannot batch an empty example list")
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield examples[order[start : start + batch_size]]


def merge_examples(client_examples, transferred) -> ExampleSet:
    return as_example_set(client_examples).concat(as_example_set(transferred))


def draw_transfer(central: ExampleSet, n: int, rng: np.random.Generator) -> ExampleSet:
    """``n`` central examples drawn without replacement."""
    if n > len(central):
        raise ValueError(f"cannot transfer {n} examples from a central pool of {len(central)}")
    if n == 0:
        return central[np.arange(0)]
    return central[np.sort(rng.choice(len(central), size=n, replace=False))]


def split_train_eval(
    fed: FederatedDataset, eval_fraction: float, seed: int
) -> tuple[FederatedDataset, FederatedDataset]:
    """Disjoint client-level split.

    The evaluation side gets ``floor(eval_fraction * n + 0.5)`` clients,
    clamped to ``[1, n - 1]``.
    """
    n = len(fed)
    if n < 2:
        raise ValueError("need at least 2 clients to split")
    if not 0 < eval_fraction < 1:
        raise ValueError("eval_fraction must be in (0, 1)")
    n_eval = min(max(1, math.floor(eval_fraction * n + 0.5)), n - 1)
    ids = fed.client_ids
    order = stream(seed, "split-train-eval").permutation(n)
    eval_ids = {ids[i] for i in order[:n_eval]}
    train = fed.subset(c for c in ids if c not in eval_ids)
    return train, fed.subset(sorted(eval_ids))


def holdout_split(examples: ExampleSet, fraction: float, seed: int) -> tuple[ExampleSet, ExampleSet]:
    """Example-level split into (kept, held_out); held_out has ``max(1, round-half-up(fraction*n))``."""
    n = len(examples)
    if n < 2:
        raise ValueError("need at least 2 examples to hold some out")
    n_out = min(max(1, math.floor(fraction * n + 0.5)), n - 1)
    order = stream(seed, "holdout").permutation(n)
    return examples[np.sort(order[n_out:])], examples[np.sort(order[:n_out])]


# ---------------------------------------------------------------------------
# JSONL
# ---------------------------------------------------------------------------


def _parse_line(path, lineno: int, line: str, dim: int | None):
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(rec, dict):
        raise DataError(f"{path}:{lineno}: expected a JSON object")
    feats = rec.get("features")
    if not isinstance(feats, list) or not feats:
        raise DataError(f"{path}:{lineno}: 'features' must be a nonempty list")
    if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in feats):
        raise DataError(f"{path}:{lineno}: features must be numbers")
    if not all(math.isfinite(v) for v in feats):
        raise DataError(f"{path}:{lineno}: features must be finite")
    if dim is not None and len(feats) != dim:
        raise DataError(f"{path}:{lineno}: feature length {len(feats)} differs from {dim} on line 1")
    label = rec.get("label")
    if isinstance(label, bool) or label not in (0, 1):
        raise DataError(f"{path}:{lineno}: label must be 0 or 1, got {label!r}")
    return rec.get("client_id"), [float(v) for v in feats], int(label)


def _read_records(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            cid, feats, label = _parse_line(path, lineno, line, dim)
            dim = len(feats)
            yield lineno, cid, feats, label


def load_federated(path) -> FederatedDataset:
    grouped: dict[str, tuple[list, list]] = {}
    for lineno, cid, feats, label in _read_records(path):
        if not isinstance(cid, str) or not cid:
            raise DataError(f"{path}:{lineno}: federated examples need a nonempty string client_id")
        xs, ys = grouped.setdefault(cid, ([], []))
        xs.append(feats)
        ys.append(label)
    if not grouped:
        raise DataError(f"{path}: no examples")
    return FederatedDataset({cid: ExampleSet(xs, ys) for cid, (xs, ys) in grouped.items()})


def load_central(path) -> ExampleSet:
    xs, ys = [], []
    for _, _, feats, label in _read_records(path):
        xs.append(feats)
        ys.append(label)
    if not xs:
        raise DataError(f"{path}: no examples")
    return ExampleSet(xs, ys)


def _dump(fh, cid, x, y) -> None:
    rec = {"client_id": cid, "features": [float(v) for v in x], "label": int(y)}
    fh.write(json.dumps(rec) + "\n")


def write_federated(fed: FederatedDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for cid, ex in fed.items():
            for x, y in zip(ex.features, ex.labels):
                _dump(fh, cid, x, y)


def write_central(central: ExampleSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for x, y in zip(central.features, central.labels):
            _dump(fh, None, x, y)


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticConfig:
    """Class-conditional Gaussian data.

    Class means are ``center +/- (class_separation / 2) * e_0`` where
    ``center = center_norm * ones / sqrt(input_dim)``. A center far from the
    origin means a positives-only model cannot separate the classes by
    accident, which is what makes the no-mixing baseline fail.
    """

    input_dim: int = 10
    n_train_clients: int = 200
    n_eval_clients: int = 50
    examples_per_client: int = 20
    n_central: int = 2000
    class_separation: float = 4.0
    client_shift_std: float = 0.5
    noise_std: float = 1.0
    center_norm: float = 5.0

    def __post_init__(self):
        for name in ("input_dim", "n_train_clients", "n_eval_clients", "examples_per_client", "n_central"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.class_separation > 0:
            raise ValueError("class_separation must be > 0")
        for name in ("client_shift_std", "noise_std", "center_norm"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def class_means(self) -> tuple[np.ndarray, np.ndarray]:
        """(positive mean, negative mean)."""
        d = self.input_dim
        center = np.full(d, self.center_norm / math.sqrt(d))
        axis = np.zeros(d)
        axis[0] = self.class_separation / 2
        return center + axis, center - axis

    def to_dict(self) -> dict:
        return asdict(self)


def _train_client(cfg: SyntheticConfig, seed: int, i: int):
    rng = stream(seed, "synth-train", i)
    d = cfg.input_dim
    shift = rng.normal(0.0, cfg.client_shift_std, d) if cfg.client_shift_std > 0 else np.zeros(d)
    mu_pos, _ = cfg.class_means()
    pos = mu_pos + shift + cfg.noise_std * rng.standard_normal((cfg.examples_per_client, d))
    return shift, pos


def _train_id(i: int) -> str:
    return f"c{i:05d}"


def synthesize(
    cfg: SyntheticConfig, seed: int
) -> tuple[FederatedDataset, ExampleSet, FederatedDataset]:
    """Return ``(train_fed, central, eval_fed)``; deterministic in ``(cfg, seed)``."""
    if cfg.examples_per_client % 2:
        raise ValueError(
            f"examples_per_client={cfg.examples_per_client} is odd; "
            "evaluation clients need an equal number of each label"
        )
    d = cfg.input_dim
    mu_pos, mu_neg = cfg.class_means()
    n = cfg.examples_per_client

    train = {}
    for i in range(cfg.n_train_clients):
        _, pos = _train_client(cfg, seed, i)
        train[_train_id(i)] = ExampleSet(pos, np.ones(n))

    rng = stream(seed, "synth-central")
    central = ExampleSet(
        mu_neg + cfg.noise_std * rng.standard_normal((cfg.n_central, d)), np.zeros(cfg.n_central)
    )

    evals = {}
    half = n // 2
    for j in range(cfg.n_eval_clients):
        rng = stream(seed, "synth-eval", j)
        shift = rng.normal(0.0, cfg.client_shift_std, d) if cfg.client_shift_std > 0 else np.zeros(d)
        pos = mu_pos + shift + cfg.noise_std * rng.standard_normal((half, d))
        neg = mu_neg + shift + cfg.noise_std * rng.standard_normal((half, d))
        evals[f"e{j:05d}"] = ExampleSet(np.vstack([pos, neg]), np.r_[np.ones(half), np.zeros(half)])

    return FederatedDataset(train), central, FederatedDataset(evals)


def synthesize_oracle(cfg: SyntheticConfig, seed: int) -> FederatedDataset:
    """Training clients holding both labels: the same positives as :func:`synthesize`
    plus an equal number of negatives drawn around the same client shift."""
    if cfg.examples_per_client % 2:
        raise ValueError(f"examples_per_client={cfg.examples_per_client} is odd")
    _, mu_neg = cfg.class_means()
    n, d = cfg.examples_per_client, cfg.input_dim
    clients = {}
    for i in range(cfg.n_train_clients):
        shift, pos = _train_client(cfg, seed, i)
        rng = stream(seed, "synth-oracle", i)
        neg = mu_neg + shift + cfg.noise_std * rng.standard_normal((n, d))
        clients[_train_id(i)] = ExampleSet(np.vstack([pos, neg]), np.r_[np.ones(n), np.zeros(n)])
    return FederatedDataset(clients)
