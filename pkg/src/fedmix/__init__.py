"""Federated learning simulation with centralized-data mixing strategies."""

from fedmix.data import FederatedDataset, SyntheticConfig, synthesize, synthesize_oracle
from fedmix.engine import Datasets, run_training, train
from fedmix.fedavg import TrainingConfig
from fedmix.metrics import PayloadModel, RoundRecord, Strategy, evaluate, payload_per_round
from fedmix.model import ArchSpec, Example, ExampleSet, ModelParams, init_params
from fedmix.optim import OptimizerConfig
from fedmix.strategies import MixingConfig

__version__ = "0.1.0"

__all__ = [
    "ArchSpec",
    "Datasets",
    "Example",
    "ExampleSet",
    "FederatedDataset",
    "MixingConfig",
    "ModelParams",
    "OptimizerConfig",
    "PayloadModel",
    "RoundRecord",
    "Strategy",
    "SyntheticConfig",
    "TrainingConfig",
    "evaluate",
    "init_params",
    "payload_per_round",
    "run_training",
    "synthesize",
    "synthesize_oracle",
    "train",
]
