"""Flat ``key = value`` experiment configuration.

Lines are ``section.name = value``; ``#`` starts a comment. Sections are
``model``, ``train``, ``mix`` and ``data``. Unknown keys are errors.

=========================  ==========================================
key                        meaning
=========================  ==========================================
model.kind                 logistic | mlp
model.hidden_dim           hidden units (mlp)
model.activation           tanh | relu (mlp)
train.rounds               federated rounds T
train.clients_per_round    clients sampled per round
train.local_steps          local optimizer steps per client
train.batch_size           client batch size
train.client_opt           sgd | sgd_momentum (likewise server/central/merge)
train.client_lr            client learning rate
train.client_momentum      client momentum
train.server_opt / server_lr / server_momentum
train.eval_every           evaluate every N rounds (and after the last)
train.seed                 master seed
mix.alpha                  parallel-training merge weight on the central delta
mix.central_steps          central steps per round (parallel training)
mix.central_batch_size     central batch size
mix.central_opt / central_lr / central_momentum
mix.merge_opt / merge_lr / merge_momentum
mix.n_transfer             central examples sent per client per round
mix.augment_scale          scale on the transferred gradient
mix.pretrain_steps         central pretraining steps (fine-tune baseline)
mix.central_holdout        central fraction held out for forgetting checks
data.*                     SyntheticConfig fields, plus data.seed
=========================  ==========================================
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from fedmix.data import SyntheticConfig
from fedmix.fedavg import TrainingConfig
from fedmix.model import ArchSpec
from fedmix.optim import OptimizerConfig
from fedmix.strategies import MixingConfig


class ConfigError(ValueError):
    pass


_OPT_ROLES = {"train": ("client", "server"), "mix": ("central", "merge")}

KEYS: dict[str, type] = {
    "model.kind": str,
    "model.hidden_dim": int,
    "model.activation": str,
    "train.rounds": int,
    "train.clients_per_round": int,
    "train.local_steps": int,
    "train.batch_size": int,
    "train.eval_every": int,
    "train.seed": int,
    "mix.alpha": float,
    "mix.central_steps": int,
    "mix.central_batch_size": int,
    "mix.n_transfer": int,
    "mix.augment_scale": float,
    "mix.pretrain_steps": int,
    "mix.central_holdout": float,
    "data.seed": int,
}
for _section, _roles in _OPT_ROLES.items():
    for _role in _roles:
        KEYS[f"{_section}.{_role}_opt"] = str
        KEYS[f"{_section}.{_role}_lr"] = float
        KEYS[f"{_section}.{_role}_momentum"] = float
for _f in fields(SyntheticConfig):
    KEYS[f"data.{_f.name}"] = int if _f.type in ("int", int) else float


def parse_config_text(text: str, source: str = "<config>") -> dict[str, object]:
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        kind = KEYS[key]
        try:
            values[key] = kind(value)
        except ValueError:
            raise ConfigError(
                f"{source}:{lineno}: bad value {value!r} for {key} (expected {kind.__name__})"
            ) from None
    return values


@dataclass
class ExperimentConfig:
    values: dict[str, object] = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path | None) -> "ExperimentConfig":
        if path is None:
            return cls()
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"{path}: config file not found")
        return cls(parse_config_text(path.read_text(encoding="utf-8"), str(path)))

    def get(self, key: str, default):
        return self.values.get(key, default)

    def _opt(self, section: str, role: str, default: OptimizerConfig) -> OptimizerConfig:
        return OptimizerConfig(
            kind=self.get(f"{section}.{role}_opt", default.kind),
            lr=self.get(f"{section}.{role}_lr", default.lr),
            momentum=self.get(f"{section}.{role}_momentum", default.momentum),
        )

    def _build(self, what: str, fn):
        try:
            return fn()
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"invalid {what} configuration: {exc}") from None

    def synthetic(self) -> SyntheticConfig:
        kwargs = {
            f.name: self.values[f"data.{f.name}"]
            for f in fields(SyntheticConfig)
            if f"data.{f.name}" in self.values
        }
        return self._build("data", lambda: SyntheticConfig(**kwargs))

    def data_seed(self, override: int | None = None) -> int:
        return override if override is not None else self.get("data.seed", 0)

    def training(self, seed: int | None = None, eval_every: int | None = None) -> TrainingConfig:
        d = TrainingConfig()

        def build():
            return TrainingConfig(
                rounds=self.get("train.rounds", d.rounds),
                clients_per_round=self.get("train.clients_per_round", d.clients_per_round),
                local_steps=self.get("train.local_steps", d.local_steps),
                client_batch_size=self.get("train.batch_size", d.client_batch_size),
                client_opt=self._opt("train", "client", d.client_opt),
                server_opt=self._opt("train", "server", d.server_opt),
                eval_every=eval_every if eval_every is not None else self.get("train.eval_every", d.eval_every),
                master_seed=seed if seed is not None else self.get("train.seed", d.master_seed),
            )

        return self._build("train", build)

    def mixing(self) -> MixingConfig:
        d = MixingConfig()

        def build():
            return MixingConfig(
                alpha=self.get("mix.alpha", d.alpha),
                central_steps=self.get("mix.central_steps", d.central_steps),
                central_batch_size=self.get("mix.central_batch_size", d.central_batch_size),
                central_opt=self._opt("mix", "central", d.central_opt),
                merge_opt=self._opt("mix", "merge", d.merge_opt),
                n_transfer=self.get("mix.n_transfer", d.n_transfer),
                augment_scale=self.get("mix.augment_scale", d.augment_scale),
                pretrain_steps=self.get("mix.pretrain_steps", d.pretrain_steps),
                central_holdout=self.get("mix.central_holdout", d.central_holdout),
            )

        return self._build("mix", build)

    def arch(self, input_dim: int) -> ArchSpec:
        d = ArchSpec()
        return self._build(
            "model",
            lambda: ArchSpec(
                kind=self.get("model.kind", d.kind),
                input_dim=input_dim,
                hidden_dim=self.get("model.hidden_dim", d.hidden_dim),
                activation=self.get("model.activation", d.activation),
            ),
        )
