"""Round functions that mix a central (datacenter) dataset into federated training.

* parallel training: central SGD and a FedAvg round start from the same
  global model; their deltas are merged with weight ``alpha``.
* example transfer: each sampled client receives ``n_transfer`` central
  examples for this round and trains on the shuffled union.
* gradient transfer: one central-batch gradient at the global model is added
  to every local gradient of every client in the round.

Also the oracle scenario (FedAvg on clients that hold both labels) and the
pretrain-then-fine-tune baseline, which forgets the central distribution.
"""

from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass, field

import numpy as np

from fedmix.data import FederatedDataset, batches, draw_transfer, holdout_split, merge_examples
from fedmix.fedavg import TrainingConfig, federated_step, run_round
from fedmix.metrics import PayloadModel, RoundRecord, Strategy, evaluate, payload_per_round
from fedmix.model import ExampleSet, ModelParams, NumericalError, accuracy, grad, loss_and_grad
from fedmix.optim import OptimizerConfig, OptimizerState, fresh_state, opt_step, opt_update
from fedmix.rng import stream


@dataclass(frozen=True)
class MixingConfig:
    alpha: float = 0.5
    central_steps: int = 5
    central_batch_size: int = 8
    central_opt: OptimizerConfig = field(default_factory=lambda: OptimizerConfig("sgd", 0.1))
    merge_opt: OptimizerConfig = field(default_factory=lambda: OptimizerConfig("sgd", 1.0))
    n_transfer: int = 20
    augment_scale: float = 1.0
    pretrain_steps: int = 200
    central_holdout: float = 0.1

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must be in [0, 1]")
        if self.central_steps < 1 or self.central_batch_size < 1:
            raise ValueError("central_steps and central_batch_size must be >= 1")
        if self.n_transfer < 0 or self.pretrain_steps < 0:
            raise ValueError("n_transfer and pretrain_steps must be >= 0")
        if self.augment_scale < 0:
            raise ValueError("augment_scale must be >= 0")
        if not 0 < self.central_holdout < 1:
            raise ValueError("central_holdout must be in (0, 1)")


@dataclass(frozen=True)
class ServerStates:
    """Optimizer state owned by the server across rounds."""

    server: OptimizerState
    central: OptimizerState
    merge: OptimizerState

    @classmethod
    def fresh(cls, arch) -> "ServerStates":
        return cls(fresh_state(arch), fresh_state(arch), fresh_state(arch))


def _require_central(central: ExampleSet | None) -> ExampleSet:
    if central is None or len(central) == 0:
        raise ValueError("this strategy needs a nonempty central dataset")
    return central


def _payload(strategy: Strategy, params: ModelParams, n_transfer: int = 0) -> tuple[int, int]:
    return payload_per_round(strategy, PayloadModel.for_arch(params.arch), n_transfer)


def central_training(
    x: ModelParams,
    state: OptimizerState,
    central: ExampleSet,
    mix: MixingConfig,
    rng: np.random.Generator,
    steps: int,
) -> tuple[ModelParams, OptimizerState, float]:
    """``steps`` optimizer steps on central batches; returns (params, state, mean loss)."""
    losses = []
    it = batches(central, mix.central_batch_size, rng)
    for _ in range(steps):
        value, g = loss_and_grad(x, next(it))
        if not (np.isfinite(value) and np.all(np.isfinite(g))):
            raise NumericalError("non-finite loss or gradient in central training")
        x, state = opt_step(x, g, mix.central_opt, state)
        losses.append(value)
    return x, state, float(np.mean(losses)) if losses else float("nan")


@dataclass(frozen=True, eq=False)
class ParallelTrace:
    """Intermediate models of a parallel round, kept for inspection."""

    central_model: ModelParams
    federated_model: ModelParams
    merged: ModelParams


def run_parallel_round(
    global_params: ModelParams,
    states: ServerStates,
    train_fed: FederatedDataset,
    central: ExampleSet,
    cfg: TrainingConfig,
    mix: MixingConfig,
    t: int,
    executor: Executor | None = None,
    trace: list | None = None,
) -> tuple[ModelParams, ServerStates, RoundRecord]:
    central = _require_central(central)
    x = global_params
    x_c, central_state, _ = central_training(
        x, states.central, central, mix, stream(cfg.master_seed, "central", t), mix.central_steps
    )
    delta_c = x_c.values - x.values

    fs = federated_step(x, states.server, train_fed, cfg, t, executor=executor)
    delta_f = fs.step

    delta = mix.alpha * delta_c + (1.0 - mix.alpha) * delta_f
    step, merge_state = opt_update(-delta, mix.merge_opt, states.merge)
    new = x.with_values(x.values + step)
    if trace is not None:
        trace.append(ParallelTrace(x_c, x.with_values(x.values + delta_f), new))

    down, up = _payload(Strategy.PARALLEL, x)
    record = RoundRecord(t, None, None, None, fs.mean_train_loss, down, up)
    return new, ServerStates(fs.server_state, central_state, merge_state), record


def run_example_transfer_round(
    global_params: ModelParams,
    state: OptimizerState,
    train_fed: FederatedDataset,
    central: ExampleSet,
    cfg: TrainingConfig,
    mix: MixingConfig,
    t: int,
    executor: Executor | None = None,
) -> tuple[ModelParams, OptimizerState, RoundRecord]:
    if mix.n_transfer > len(central if central is not None else ()):
        raise ValueError(
            f"n_transfer={mix.n_transfer} exceeds the central pool size {len(central or ())}"
        )
    seed = cfg.master_seed

    def mixed(cid: str, data: ExampleSet) -> ExampleSet:
        sent = draw_transfer(central, mix.n_transfer, stream(seed, "transfer", t, cid))
        return merge_examples(data, sent)

    fs = federated_step(global_params, state, train_fed, cfg, t, client_data=mixed, executor=executor)
    down, up = _payload(Strategy.EXAMPLE_TRANSFER, global_params, mix.n_transfer)
    record = RoundRecord(t, None, None, None, fs.mean_train_loss, down, up)
    return global_params.with_values(global_params.values + fs.step), fs.server_state, record


def augmenting_gradient(
    global_params: ModelParams, central: ExampleSet, cfg: TrainingConfig, mix: MixingConfig, t: int
) -> np.ndarray:
    """Gradient of one central batch at the round's global model."""
    rng = stream(cfg.master_seed, "central", t)
    return grad(global_params, next(batches(central, mix.central_batch_size, rng)))


def run_gradient_transfer_round(
    global_params: ModelParams,
    state: OptimizerState,
    train_fed: FederatedDataset,
    central: ExampleSet,
    cfg: TrainingConfig,
    mix: MixingConfig,
    t: int,
    executor: Executor | None = None,
) -> tuple[ModelParams, OptimizerState, RoundRecord]:
    central = _require_central(central)
    g_tilde = augmenting_gradient(global_params, central, cfg, mix, t)
    augment = mix.augment_scale * g_tilde
    fs = federated_step(global_params, state, train_fed, cfg, t, augment=augment, executor=executor)
    if mix.augment_scale == 0:
        # nothing is shipped besides the model
        down, up = _payload(Strategy.NO_MIX, global_params)
    else:
        down, up = _payload(Strategy.GRADIENT_TRANSFER, global_params)
    record = RoundRecord(t, None, None, None, fs.mean_train_loss, down, up)
    return global_params.with_values(global_params.values + fs.step), fs.server_state, record


def run_oracle_round(
    global_params: ModelParams,
    state: OptimizerState,
    oracle_fed: FederatedDataset,
    cfg: TrainingConfig,
    t: int,
    executor: Executor | None = None,
) -> tuple[ModelParams, OptimizerState, RoundRecord]:
    return run_round(global_params, state, oracle_fed, cfg, t, executor=executor)


def run_fine_tune(
    init: ModelParams,
    train_fed: FederatedDataset,
    central: ExampleSet,
    eval_fed: FederatedDataset,
    cfg: TrainingConfig,
    mix: MixingConfig,
    rounds: int | None = None,
    executor: Executor | None = None,
) -> tuple[list[RoundRecord], ModelParams]:
    """Pretrain on central data, then run plain FedAvg on the federated data.

    The first record (round ``-1``) describes the pretrained model. Every
    evaluated record also carries ``central_accuracy``: accuracy on a slice of
    the central data held out from pretraining.
    """
    if mix.pretrain_steps < 1:
        raise ValueError("pretrain_steps must be >= 1 for fine-tuning")
    central = _require_central(central)
    rounds = cfg.rounds if rounds is None else rounds
    pretrain_set, central_eval = holdout_split(central, mix.central_holdout, cfg.master_seed)

    x, _, pre_loss = central_training(
        init, fresh_state(init.arch), pretrain_set, mix, stream(cfg.master_seed, "pretrain"),
        mix.pretrain_steps,
    )
    records = [
        RoundRecord(-1, *evaluate(x, eval_fed), pre_loss, 0, 0, accuracy(x, central_eval))
    ]
    state = fresh_state(x.arch)
    for t in range(rounds):
        x, state, rec = run_round(x, state, train_fed, cfg, t, executor=executor)
        if cfg.is_eval_round(t):
            rec = rec.with_eval(*evaluate(x, eval_fed), central=accuracy(x, central_eval))
        records.append(rec)
    return records, x
