"""Generalized FedAvg: local client training, weighted delta aggregation, server update."""

from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass, field
from itertools import islice
from typing import Callable

import numpy as np

from fedmix.data import FederatedDataset, batches, sample_clients
from fedmix.metrics import PayloadModel, RoundRecord, Strategy, payload_per_round
from fedmix.model import ExampleSet, ModelParams, NumericalError, as_example_set, loss_and_grad
from fedmix.optim import OptimizerConfig, OptimizerState, fresh_state, opt_step, opt_update
from fedmix.rng import stream


@dataclass(frozen=True)
class TrainingConfig:
    rounds: int = 50
    clients_per_round: int = 20
    local_steps: int = 5
    client_batch_size: int = 8
    client_opt: OptimizerConfig = field(default_factory=lambda: OptimizerConfig("sgd", 0.1))
    server_opt: OptimizerConfig = field(default_factory=lambda: OptimizerConfig("sgd", 1.0))
    eval_every: int = 10
    master_seed: int = 0

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        for name in ("clients_per_round", "local_steps", "client_batch_size", "eval_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def is_eval_round(self, t: int) -> bool:
        return (t + 1) % self.eval_every == 0 or t == self.rounds - 1


@dataclass(frozen=True, eq=False)
class ClientUpdate:
    client: str
    delta: np.ndarray
    weight: float
    train_loss: float = float("nan")

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError("client weight must be positive")
        if not np.all(np.isfinite(self.delta)):
            raise NumericalError(f"client {self.client!r} produced a non-finite delta")


def client_update(
    global_params: ModelParams,
    client_data,
    cfg: TrainingConfig,
    rng: np.random.Generator,
    client_id: str = "",
    augment: np.ndarray | None = None,
) -> ClientUpdate:
    """Run ``cfg.local_steps`` optimizer steps from the global model on this client's data.

    ``augment``, when given, is added to every local gradient before the
    optimizer step. The returned weight is the client's example count.
    """
    data = as_example_set(client_data)
    if len(data) == 0:
        raise ValueError(f"client {client_id!r} has no data")
    x = global_params
    state = fresh_state(x.arch)
    losses = []
    for k, batch in enumerate(islice(batches(data, cfg.client_batch_size, rng), cfg.local_steps)):
        value, g = loss_and_grad(x, batch)
        if not (np.isfinite(value) and np.all(np.isfinite(g))):
            raise NumericalError(f"client {client_id!r}: non-finite loss or gradient at local step {k}")
        if augment is not None:
            g = g + augment
        x, state = opt_step(x, g, cfg.client_opt, state)
        losses.append(value)
    return ClientUpdate(client_id, x.values - global_params.values, float(len(data)), float(np.mean(losses)))


def aggregate(updates) -> np.ndarray:
    """Example-weighted mean of client deltas, summed in ascending client-id order."""
    updates = sorted(updates, key=lambda u: u.client)
    if not updates:
        raise ValueError("cannot aggregate an empty list of updates")
    shape = updates[0].delta.shape
    total = np.zeros(shape)
    weight = 0.0
    for u in updates:
        if u.delta.shape != shape:
            raise ValueError(f"delta from {u.client!r} has shape {u.delta.shape}, expected {shape}")
        total += u.weight * u.delta
        weight += u.weight
    return total / weight


@dataclass(frozen=True)
class FederatedStep:
    """Outcome of one FedAvg round before it is applied to the global model."""

    step: np.ndarray  # additive server update, i.e. x_f - x
    server_state: OptimizerState
    mean_train_loss: float
    clients: list[str]


def federated_step(
    global_params: ModelParams,
    server_state: OptimizerState,
    fed: FederatedDataset,
    cfg: TrainingConfig,
    t: int,
    *,
    client_data: Callable[[str, ExampleSet], ExampleSet] | None = None,
    augment: np.ndarray | None = None,
    executor: Executor | None = None,
) -> FederatedStep:
    """Sample clients, train them, aggregate and compute the server update.

    ``client_data`` may replace a client's examples for this round only
    (used for example transfer). Every client draws from its own stream, so
    running them on ``executor`` gives the same result as running serially.
    """
    seed = cfg.master_seed
    ids = sample_clients(fed, cfg.clients_per_round, stream(seed, "sample", t))

    def work(cid: str) -> ClientUpdate:
        data = fed[cid] if client_data is None else client_data(cid, fed[cid])
        return client_update(global_params, data, cfg, stream(seed, "client", t, cid), cid, augment)

    updates = list(executor.map(work, ids) if executor is not None else map(work, ids))
    delta = aggregate(updates)
    step, server_state = opt_update(-delta, cfg.server_opt, server_state)
    mean_loss = float(np.mean([u.train_loss for u in updates]))
    return FederatedStep(step, server_state, mean_loss, ids)


def run_round(
    global_params: ModelParams,
    state: OptimizerState,
    train_fed: FederatedDataset,
    cfg: TrainingConfig,
    t: int,
    executor: Executor | None = None,
) -> tuple[ModelParams, OptimizerState, RoundRecord]:
    """One round of generalized FedAvg; the record carries no evaluation."""
    fs = federated_step(global_params, state, train_fed, cfg, t, executor=executor)
    down, up = payload_per_round(Strategy.NO_MIX, PayloadModel.for_arch(global_params.arch))
    record = RoundRecord(t, None, None, None, fs.mean_train_loss, down, up)
    return global_params.with_values(global_params.values + fs.step), fs.server_state, record
