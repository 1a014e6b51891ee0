"""Training driver: dispatches a scenario to its round function and records metrics."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass

from fedmix.data import DataError, FederatedDataset
from fedmix.fedavg import TrainingConfig, run_round
from fedmix.metrics import RoundRecord, Strategy, evaluate
from fedmix.model import ArchSpec, ExampleSet, ModelParams, init_params
from fedmix.optim import fresh_state
from fedmix.strategies import (
    MixingConfig,
    ServerStates,
    run_example_transfer_round,
    run_fine_tune,
    run_gradient_transfer_round,
    run_oracle_round,
    run_parallel_round,
)

log = logging.getLogger(__name__)

NEEDS_CENTRAL = {
    Strategy.PARALLEL,
    Strategy.EXAMPLE_TRANSFER,
    Strategy.GRADIENT_TRANSFER,
    Strategy.FINE_TUNE,
}


@dataclass(frozen=True)
class Datasets:
    train: FederatedDataset
    eval: FederatedDataset
    central: ExampleSet | None = None
    oracle: FederatedDataset | None = None


def _check(datasets: Datasets, cfg: TrainingConfig, strategy: Strategy, mix: MixingConfig) -> None:
    if strategy in NEEDS_CENTRAL and (datasets.central is None or len(datasets.central) == 0):
        raise DataError(f"scenario {strategy.label} needs central data")
    if strategy is Strategy.ORACLE and datasets.oracle is None:
        raise DataError("scenario oracle needs the oracle federated dataset")
    fed = datasets.oracle if strategy is Strategy.ORACLE else datasets.train
    if cfg.clients_per_round > len(fed):
        raise ValueError(f"clients_per_round={cfg.clients_per_round} exceeds the {len(fed)} available clients")
    if strategy is Strategy.EXAMPLE_TRANSFER and mix.n_transfer > len(datasets.central):
        raise ValueError(f"n_transfer={mix.n_transfer} exceeds the central pool size {len(datasets.central)}")
    dims = {datasets.train.input_dim, datasets.eval.input_dim}
    if datasets.central is not None and len(datasets.central):
        dims.add(datasets.central.input_dim)
    if datasets.oracle is not None:
        dims.add(datasets.oracle.input_dim)
    if len(dims) != 1:
        raise DataError(f"datasets disagree on input_dim: {sorted(dims)}")


def train(
    datasets: Datasets,
    cfg: TrainingConfig,
    strategy: Strategy | str = Strategy.NO_MIX,
    mix: MixingConfig | None = None,
    arch: ArchSpec | None = None,
    jobs: int = 1,
) -> tuple[list[RoundRecord], ModelParams]:
    """Run ``cfg.rounds`` rounds of ``strategy`` and return (records, final model).

    ``arch`` defaults to logistic regression over the data's input dimension;
    its ``input_dim`` must match the data. ``jobs > 1`` trains a round's
    clients on a thread pool without changing any result.
    """
    strategy = Strategy.parse(strategy)
    mix = mix or MixingConfig()
    _check(datasets, cfg, strategy, mix)
    arch = arch or ArchSpec("logistic", datasets.train.input_dim)
    if arch.input_dim != datasets.train.input_dim:
        raise DataError(f"model input_dim {arch.input_dim} != data input_dim {datasets.train.input_dim}")
    x = init_params(arch, cfg.master_seed)

    pool = ThreadPoolExecutor(max_workers=jobs) if jobs > 1 else nullcontext()
    with pool as executor:
        if strategy is Strategy.FINE_TUNE:
            return run_fine_tune(
                x, datasets.train, datasets.central, datasets.eval, cfg, mix, executor=executor
            )

        records: list[RoundRecord] = []
        if strategy is Strategy.PARALLEL:
            state = ServerStates.fresh(arch)
        else:
            state = fresh_state(arch)
        for t in range(cfg.rounds):
            if strategy is Strategy.NO_MIX:
                x, state, rec = run_round(x, state, datasets.train, cfg, t, executor)
            elif strategy is Strategy.ORACLE:
                x, state, rec = run_oracle_round(x, state, datasets.oracle, cfg, t, executor)
            elif strategy is Strategy.PARALLEL:
                x, state, rec = run_parallel_round(
                    x, state, datasets.train, datasets.central, cfg, mix, t, executor
                )
            elif strategy is Strategy.EXAMPLE_TRANSFER:
                x, state, rec = run_example_transfer_round(
                    x, state, datasets.train, datasets.central, cfg, mix, t, executor
                )
            else:
                x, state, rec = run_gradient_transfer_round(
                    x, state, datasets.train, datasets.central, cfg, mix, t, executor
                )
            if cfg.is_eval_round(t):
                rec = rec.with_eval(*evaluate(x, datasets.eval))
                log.info("%s round %d: eval accuracy %.4f", strategy.label, t, rec.eval_accuracy)
            records.append(rec)
    return records, x


def run_training(
    datasets: Datasets,
    cfg: TrainingConfig,
    strategy: Strategy | str = Strategy.NO_MIX,
    mix: MixingConfig | None = None,
    arch: ArchSpec | None = None,
    jobs: int = 1,
) -> list[RoundRecord]:
    return train(datasets, cfg, strategy, mix, arch, jobs)[0]
