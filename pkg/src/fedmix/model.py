"""Binary classifiers over feature vectors with analytic gradients.

Two architectures are supported, both ending in a sigmoid unit:

* ``logistic``: ``p = sigmoid(w . x + b)``
* ``mlp``:      ``p = sigmoid(w2 . act(W1 x + b1) + b2)``

Parameters live in one flat float64 vector, layer-major with weights before
biases: ``[w, b]`` for logistic and ``[W1 (row-major, hidden x input), b1,
w2, b2]`` for the MLP. Deltas and gradients are plain arrays congruent to it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from fedmix.rng import stream

EPS_CLIP = 1e-7
INIT_SCALE = 0.05

KINDS = ("logistic", "mlp")
ACTIVATIONS = ("tanh", "relu")


class NumericalError(ArithmeticError):
    """A loss, gradient or parameter became non-finite."""


# ---------------------------------------------------------------------------
# Examples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Example:
    features: tuple[float, ...]
    label: int

    def __post_init__(self):
        feats = tuple(float(v) for v in self.features)
        if not all(math.isfinite(v) for v in feats):
            raise ValueError("example features must be finite")
        if self.label not in (0, 1) or isinstance(self.label, bool):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "label", int(self.label))


class ExampleSet(Sequence[Example]):
    """Immutable batch of examples stored column-wise as numpy arrays.

    Behaves as a sequence of :class:`Example`; slicing or fancy indexing
    returns another ``ExampleSet`` sharing no mutable state with this one.
    """

    __slots__ = ("features", "labels")

    def __init__(self, features, labels):
        x = np.array(features, dtype=np.float64, copy=True)
        y = np.array(labels, dtype=np.int64, copy=True)
        if x.ndim == 1 and x.size == 0:
            x = x.reshape(0, 0)
        if x.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise ValueError(f"{x.shape[0]} feature rows but labels have shape {y.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("example features must be finite")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be 0 or 1")
        x.setflags(write=False)
        y.setflags(write=False)
        self.features = x
        self.labels = y

    @classmethod
    def from_examples(cls, examples: Iterable[Example]) -> "ExampleSet":
        examples = list(examples)
        if not examples:
            return cls(np.empty((0, 0)), np.empty(0))
        return cls([e.features for e in examples], [e.label for e in examples])

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.labels.shape[0]

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return Example(tuple(self.features[idx]), int(self.labels[idx]))
        return ExampleSet(self.features[idx], self.labels[idx])

    def __iter__(self) -> Iterator[Example]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ExampleSet):
            return NotImplemented
        return np.array_equal(self.features, other.features) and np.array_equal(
            self.labels, other.labels
        )

    def __repr__(self) -> str:
        return f"ExampleSet(n={len(self)}, input_dim={self.input_dim})"

    def concat(self, other: "ExampleSet") -> "ExampleSet":
        if len(other) == 0:
            return self
        if len(self) == 0:
            return other
        if other.input_dim != self.input_dim:
            raise ValueError(f"input_dim mismatch: {self.input_dim} vs {other.input_dim}")
        return ExampleSet(
            np.concatenate([self.features, other.features]),
            np.concatenate([self.labels, other.labels]),
        )

    def label_counts(self) -> tuple[int, int]:
        n_pos = int(self.labels.sum())
        return len(self) - n_pos, n_pos


def as_example_set(examples: ExampleSet | Iterable[Example]) -> ExampleSet:
    if isinstance(examples, ExampleSet):
        return examples
    return ExampleSet.from_examples(examples)


# ---------------------------------------------------------------------------
# Architecture and parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ArchSpec:
    kind: str = "logistic"
    input_dim: int = 1
    hidden_dim: int = 8
    activation: str = "tanh"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.kind == "mlp":
            if self.hidden_dim < 1:
                raise ValueError("hidden_dim must be >= 1 for mlp")
            if self.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def param_count(self) -> int:
        if self.kind == "logistic":
            return self.input_dim + 1
        h = self.hidden_dim
        return self.input_dim * h + h + h + 1

    def bias_mask(self) -> np.ndarray:
        mask = np.zeros(self.param_count, dtype=bool)
        if self.kind == "logistic":
            mask[-1] = True
        else:
            d, h = self.input_dim, self.hidden_dim
            mask[d * h : d * h + h] = True
            mask[-1] = True
        return mask


@dataclass(frozen=True, eq=False)
class ModelParams:
    arch: ArchSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True)
        if v.shape != (self.arch.param_count,):
            raise ValueError(
                f"expected {self.arch.param_count} parameters for {self.arch}, got shape {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise NumericalError("model parameters must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def with_values(self, values: np.ndarray) -> "ModelParams":
        return ModelParams(self.arch, values)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ModelParams):
            return NotImplemented
        return self.arch == other.arch and np.array_equal(self.values, other.values)


def init_params(arch: ArchSpec, seed: int) -> ModelParams:
    """Weights i.i.d. uniform in [-0.05, 0.05], biases zero."""
    rng = stream(seed, "init-params", arch.kind, arch.input_dim, arch.hidden_dim)
    values = rng.uniform(-INIT_SCALE, INIT_SCALE, size=arch.param_count)
    values[arch.bias_mask()] = 0.0
    return ModelParams(arch, values)


def _unpack(params: ModelParams):
    arch, v = params.arch, params.values
    d = arch.input_dim
    if arch.kind == "logistic":
        return v[:d], v[d]
    h = arch.hidden_dim
    W1 = v[: d * h].reshape(h, d)
    b1 = v[d * h : d * h + h]
    w2 = v[d * h + h : d * h + 2 * h]
    return W1, b1, w2, v[-1]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _act(arch: ArchSpec, a: np.ndarray) -> np.ndarray:
    return np.tanh(a) if arch.activation == "tanh" else np.maximum(a, 0.0)


def _act_prime(arch: ArchSpec, a: np.ndarray, h: np.ndarray) -> np.ndarray:
    if arch.activation == "tanh":
        return 1.0 - h * h
    return (a > 0).astype(np.float64)


def _check_dim(params: ModelParams, x: np.ndarray) -> None:
    if x.shape[1] != params.arch.input_dim:
        raise ValueError(
            f"feature length {x.shape[1]} does not match model input_dim {params.arch.input_dim}"
        )


def preactivations(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Hidden-layer pre-activations (mlp only), shape (n, hidden_dim)."""
    W1, b1, _, _ = _unpack(params)
    return x @ W1.T + b1


def predict_proba(params: ModelParams, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    _check_dim(params, x)
    if params.arch.kind == "logistic":
        w, b = _unpack(params)
        return _sigmoid(x @ w + b)
    W1, b1, w2, b2 = _unpack(params)
    return _sigmoid(_act(params.arch, x @ W1.T + b1) @ w2 + b2)


def forward(params: ModelParams, example: Example) -> float:
    return float(predict_proba(params, np.asarray(example.features)[None, :])[0])


def _nonempty(batch) -> ExampleSet:
    batch = as_example_set(batch)
    if len(batch) == 0:
        raise ValueError("batch must be nonempty")
    return batch


def _bce(p: np.ndarray, y: np.ndarray) -> float:
    p = np.clip(p, EPS_CLIP, 1.0 - EPS_CLIP)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def loss(params: ModelParams, batch) -> float:
    """Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7]."""
    batch = _nonempty(batch)
    return _bce(predict_proba(params, batch.features), batch.labels)


def loss_and_grad(params: ModelParams, batch) -> tuple[float, np.ndarray]:
    """Loss and its gradient in one forward/backward pass.

    The backward pass uses the unclamped ``p - y`` error signal, which equals
    the derivative of the clamped loss wherever the clamp is inactive and
    keeps saturated, misclassified examples trainable.
    """
    batch = _nonempty(batch)
    x, y = batch.features, batch.labels
    _check_dim(params, x)
    n = len(batch)
    arch = params.arch
    if arch.kind == "logistic":
        w, b = _unpack(params)
        p = _sigmoid(x @ w + b)
        err = (p - y) / n
        g = np.empty(arch.param_count)
        g[:-1] = err @ x
        g[-1] = err.sum()
        return _bce(p, y), g

    W1, b1, w2, b2 = _unpack(params)
    a = x @ W1.T + b1
    h = _act(arch, a)
    p = _sigmoid(h @ w2 + b2)
    err = (p - y) / n
    dh = np.outer(err, w2) * _act_prime(arch, a, h)
    d, hd = arch.input_dim, arch.hidden_dim
    g = np.empty(arch.param_count)
    g[: d * hd] = (dh.T @ x).ravel()
    g[d * hd : d * hd + hd] = dh.sum(axis=0)
    g[d * hd + hd : d * hd + 2 * hd] = err @ h
    g[-1] = err.sum()
    return _bce(p, y), g


def grad(params: ModelParams, batch) -> np.ndarray:
    return loss_and_grad(params, batch)[1]


def finite_diff_grad(params: ModelParams, batch, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of :func:`loss`, one coordinate at a time."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    batch = _nonempty(batch)
    base = params.values
    g = np.empty_like(base)
    for j in range(base.size):
        up = base.copy()
        up[j] += eps
        down = base.copy()
        down[j] -= eps
        g[j] = (loss(params.with_values(up), batch) - loss(params.with_values(down), batch)) / (
            2 * eps
        )
    return g


def accuracy(params: ModelParams, examples, threshold: float = 0.5) -> float:
    """Fraction of examples where ``p >= threshold`` agrees with the label."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must be in (0, 1)")
    examples = as_example_set(examples)
    if len(examples) == 0:
        raise ValueError("cannot compute accuracy of an empty example list")
    pred = (predict_proba(params, examples.features) >= threshold).astype(np.int64)
    return float(np.mean(pred == examples.labels))


# ---------------------------------------------------------------------------
# Gradient self-check
# ---------------------------------------------------------------------------

REL_ERR_FLOOR = 1e-6


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max_j |a_j - n_j| / max(|a_j|, |n_j|, 1e-6)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_ERR_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom))


def gradient_check(
    arch: ArchSpec, seed: int = 0, draws: int = 10, eps: float = 1e-5, batch_size: int = 16
) -> float:
    """Worst relative error between :func:`grad` and :func:`finite_diff_grad`.

    Each draw samples parameters uniform in [-1, 1], standard-normal features
    and fair-coin labels. For relu MLPs, draws with any pre-activation within
    1e-3 of the kink are rejected and redrawn.
    """
    worst = 0.0
    for k in range(draws):
        rng = stream(seed, "gradcheck", k)
        while True:
            params = ModelParams(arch, rng.uniform(-1.0, 1.0, size=arch.param_count))
            batch = ExampleSet(
                rng.standard_normal((batch_size, arch.input_dim)),
                rng.integers(0, 2, size=batch_size),
            )
            if arch.kind == "mlp" and arch.activation == "relu":
                if np.min(np.abs(preactivations(params, batch.features))) < 1e-3:
                    continue
            break
        worst = max(worst, max_relative_error(grad(params, batch), finite_diff_grad(params, batch, eps)))
    return worst


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def save_params(params: ModelParams, path: str | Path) -> None:
    """Write a one-line JSON arch header followed by little-endian float64 values."""
    arch = params.arch
    header = {
        "kind": arch.kind,
        "input_dim": arch.input_dim,
        "hidden_dim": arch.hidden_dim,
        "activation": arch.activation,
        "param_count": arch.param_count,
        "dtype": "<f8",
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(params.values.astype("<f8").tobytes())


def load_params(path: str | Path) -> ModelParams:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        payload = fh.read()
    arch = ArchSpec(
        kind=header["kind"],
        input_dim=header["input_dim"],
        hidden_dim=header["hidden_dim"],
        activation=header["activation"],
    )
    values = np.frombuffer(payload, dtype="<f8")
    if values.size != header["param_count"]:
        raise ValueError(f"{path}: expected {header['param_count']} values, found {values.size}")
    return ModelParams(arch, values)
