"""First-order update rule shared by the client, server, central and merge optimizers.

Callers pass a raw gradient for client/central training and the negated
aggregate delta (a pseudo-gradient) for server/merge updates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fedmix.model import ArchSpec, ModelParams, NumericalError

OPT_KINDS = ("sgd", "sgd_momentum")


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "sgd"
    lr: float = 0.1
    momentum: float = 0.0

    def __post_init__(self):
        if self.kind not in OPT_KINDS:
            raise ValueError(f"unknown optimizer {self.kind!r}; expected one of {OPT_KINDS}")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")


@dataclass(frozen=True, eq=False)
class OptimizerState:
    velocity: np.ndarray

    def __eq__(self, other) -> bool:
        if not isinstance(other, OptimizerState):
            return NotImplemented
        return np.array_equal(self.velocity, other.velocity)


def fresh_state(arch: ArchSpec) -> OptimizerState:
    return OptimizerState(np.zeros(arch.param_count))


def opt_update(
    direction: np.ndarray, config: OptimizerConfig, state: OptimizerState
) -> tuple[np.ndarray, OptimizerState]:
    """Return the additive step ``u`` (so that ``params' = params + u``) and the new state.

    Exposed separately from :func:`opt_step` so that a model delta such as
    ``x_f - x`` can be taken as ``u`` itself rather than recovered by
    subtracting two nearly equal vectors.
    """
    direction = np.asarray(direction, dtype=np.float64)
    if direction.shape != state.velocity.shape:
        raise ValueError(
            f"direction has shape {direction.shape}, optimizer state has {state.velocity.shape}"
        )
    if not np.all(np.isfinite(direction)):
        raise NumericalError("optimizer direction is not finite")
    if config.kind == "sgd":
        return -(config.lr * direction), state
    velocity = config.momentum * state.velocity + direction
    return -(config.lr * velocity), OptimizerState(velocity)


def opt_step(
    params: ModelParams, direction: np.ndarray, config: OptimizerConfig, state: OptimizerState
) -> tuple[ModelParams, OptimizerState]:
    """sgd: ``x - lr*d``; sgd_momentum: ``v = m*v + d`` then ``x - lr*v``."""
    if np.shape(direction) != params.values.shape:
        raise ValueError(
            f"direction has shape {np.shape(direction)}, params have {params.values.shape}"
        )
    step, state = opt_update(direction, config, state)
    return params.with_values(params.values + step), state
