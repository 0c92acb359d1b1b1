"""The trainable network: an MLP feature extractor plus an age head.

The extractor maps an input vector through relu layers to a feature
vector f (post-activation of the last extractor layer); a final fully
connected layer maps f to one logit per age label, and softmax turns the
logits into an age distribution s. The age estimate is the mean of s.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Array, Tape, Tensor

CHECKPOINT_FORMAT = "agecontrast-checkpoint-v1"


@dataclass(frozen=True)
class ModelConfig:
    """Layer widths chain input_dim -> hidden_widths... -> feature_dim -> num_ages."""

    input_dim: int
    hidden_widths: tuple[int, ...] = (64,)
    feature_dim: int = 64
    num_ages: int = 60

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        for d in self.layer_dims:
            if int(d) < 1:
                raise ValueError(f"ModelConfig: all dimensions must be >= 1, got {self.layer_dims}")

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_widths, self.feature_dim, self.num_ages]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_widths": list(self.hidden_widths),
            "feature_dim": self.feature_dim,
            "num_ages": self.num_ages,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            input_dim=int(d["input_dim"]),
            hidden_widths=tuple(int(w) for w in d["hidden_widths"]),
            feature_dim=int(d["feature_dim"]),
            num_ages=int(d["num_ages"]),
        )


@dataclass
class Model:
    """Weight matrices (fan_in, fan_out) and bias vectors, one pair per layer.

    The last pair is the age head; every earlier pair belongs to the
    extractor and is followed by relu.
    """

    config: ModelConfig
    weights: list[Array]
    biases: list[Array]

    def parameters(self) -> list[Array]:
        """The live parameter arrays, interleaved (w0, b0, w1, b1, ...)."""
        out: list[Array] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def param_names(self) -> list[str]:
        names = []
        last = len(self.weights) - 1
        for i in range(len(self.weights)):
            stem = "head" if i == last else f"layer{i}"
            names.append(f"{stem}.weight")
            names.append(f"{stem}.bias")
        return names

    def copy(self) -> "Model":
        return Model(self.config, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def track(self, tape: Tape) -> "ParamView":
        """Register every parameter on a tape for a training step."""
        return ParamView(
            self.config,
            [tape.watch(w) for w in self.weights],
            [tape.watch(b) for b in self.biases],
        )


@dataclass
class ParamView:
    """Model parameters as tensors (tracked or constant), same layout as Model."""

    config: ModelConfig
    weights: list[Tensor]
    biases: list[Tensor]

    def tracked_parameters(self) -> list[Tensor]:
        out: list[Tensor] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def init_model(config: ModelConfig, seed: int) -> Model:
    """He-style init: weights ~ Normal(0, sqrt(2/fan_in)), biases zero."""
    rng = np.random.default_rng(seed)
    dims = config.layer_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Model(config, weights, biases)


def _layers(model: Model | ParamView):
    return list(zip(model.weights, model.biases))


def forward(model: Model | ParamView, x) -> tuple[Tensor, Tensor]:
    """Run one input vector through the network.

    Returns (f, s): the extractor features and the softmax age
    distribution. Both are recorded on the tape when the parameters are
    tracked.
    """
    xt = x if isinstance(x, Tensor) else Tensor(x)
    if xt.data.ndim != 1 or xt.data.shape[0] != model.config.input_dim:
        raise ValueError(
            f"forward: expected input of length {model.config.input_dim}, got shape {xt.data.shape}")
    if not np.all(np.isfinite(xt.data)):
        raise ValueError("forward: non-finite input value")
    layers = _layers(model)
    h = xt
    for w, b in layers[:-1]:
        h = ad.relu(ad.add(ad.matmul(h, w), b))
    w_head, b_head = layers[-1]
    logits = ad.add(ad.matmul(h, w_head), b_head)
    return h, ad.softmax(logits)


def forward_batch(model: Model | ParamView, x_rows) -> tuple[Tensor, Tensor]:
    """forward() over a (batch, input_dim) matrix; returns (F, S) row-wise."""
    xt = x_rows if isinstance(x_rows, Tensor) else Tensor(x_rows)
    if xt.data.ndim != 2 or xt.data.shape[1] != model.config.input_dim:
        raise ValueError(
            f"forward_batch: expected (n, {model.config.input_dim}) inputs, got shape {xt.data.shape}")
    layers = _layers(model)
    h = xt
    for w, b in layers[:-1]:
        h = ad.relu(ad.add_rowvec(ad.matmul(h, w), b))
    w_head, b_head = layers[-1]
    logits = ad.add_rowvec(ad.matmul(h, w_head), b_head)
    return h, ad.softmax_rows(logits)


def forward_values(model: Model, x_rows: Array) -> tuple[Array, Array]:
    """Plain-numpy batched forward for evaluation (no tape, same math)."""
    h = np.asarray(x_rows, dtype=np.float64)
    for w, b in _layers(model)[:-1]:
        h = np.maximum(h @ w + b, 0.0)
    w_head, b_head = _layers(model)[-1]
    z = h @ w_head + b_head
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return h, e / e.sum(axis=1, keepdims=True)


def predict_age(s, mode: str = "mean") -> float:
    """Age estimate from a distribution over labels 1..A.

    "mean" returns sum_j j*s_j (always in [1, A]); "argmax" returns the
    modal label.
    """
    arr = np.asarray(s.data if isinstance(s, Tensor) else s, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError(f"predict_age: expected a distribution vector, got shape {arr.shape}")
    if mode == "mean":
        labels = np.arange(1, arr.size + 1, dtype=np.float64)
        return float(arr @ labels)
    if mode == "argmax":
        return float(int(np.argmax(arr)) + 1)
    raise ValueError(f"predict_age: unknown mode {mode!r}")


def predict_ages(s_rows: Array, mode: str = "mean") -> Array:
    """Row-wise predict_age over a matrix of distributions."""
    s_rows = np.asarray(s_rows, dtype=np.float64)
    if mode == "mean":
        labels = np.arange(1, s_rows.shape[1] + 1, dtype=np.float64)
        return s_rows @ labels
    if mode == "argmax":
        return (np.argmax(s_rows, axis=1) + 1).astype(np.float64)
    raise ValueError(f"predict_ages: unknown mode {mode!r}")


def pack_params(model: Model) -> Array:
    """All parameters flattened into one vector (init order)."""
    return np.concatenate([p.ravel() for p in model.parameters()])


def unpack_params(flat, config: ModelConfig) -> ParamView:
    """Inverse of pack_params; works for tracked flats so the whole model
    can be gradient-checked through one vector."""
    ft = flat if isinstance(flat, Tensor) else Tensor(flat)
    dims = config.layer_dims
    expected = sum(int(np.prod(s)) for s in _param_shapes(config))
    if ft.data.ndim != 1 or ft.data.size != expected:
        raise ValueError(
            f"unpack_params: vector of shape {ft.data.shape} does not fit {dims} "
            f"({expected} parameters)")
    weights, biases = [], []
    offset = 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = ad.reshape(ad.slice1d(ft, offset, offset + fan_in * fan_out), (fan_in, fan_out))
        offset += fan_in * fan_out
        b = ad.slice1d(ft, offset, offset + fan_out)
        offset += fan_out
        weights.append(w)
        biases.append(b)
    return ParamView(config, weights, biases)


def save_model(model: Model, path) -> None:
    """Write a self-describing textual checkpoint; load(save(m)) is bitwise m."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": model.config.to_dict(),
        "parameters": [
            {"name": name, "shape": list(arr.shape), "data": [float(v) for v in arr.ravel()]}
            for name, arr in zip(model.param_names(), model.parameters())
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")


def load_model(path) -> Model:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"load_model: unrecognized checkpoint format in {path}")
    config = ModelConfig.from_dict(payload["config"])
    arrays = [np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
              for entry in payload["parameters"]]
    expected = [tuple(s) for s in _param_shapes(config)]
    got = [a.shape for a in arrays]
    if got != expected:
        raise ValueError(f"load_model: parameter shapes {got} do not match config {expected}")
    weights = arrays[0::2]
    biases = arrays[1::2]
    return Model(config, weights, biases)


def _param_shapes(config: ModelConfig) -> list[tuple[int, ...]]:
    dims = config.layer_dims
    shapes: list[tuple[int, ...]] = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        shapes.append((fan_in, fan_out))
        shapes.append((fan_out,))
    return shapes
