"""Network specs, parameter state, forward/backward passes and the gradient checker."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

import numpy as np

from .layers import Activation, Dense, Layer, Params, Shape, SpecError, layer_from_dict

INITIALIZERS = ("glorot_uniform", "lecun_normal", "he_uniform")


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[Layer, ...]
    input_shape: Shape
    initializer: str = "glorot_uniform"
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        self.validate()

    def validate(self) -> Shape:
        """Check that layer shapes compose; returns the output shape."""
        if not self.layers:
            raise SpecError("network has no layers")
        if self.initializer not in INITIALIZERS and self.initializer != "zeros":
            raise SpecError(f"unknown initializer {self.initializer!r}")
        if not isinstance(self.layers[-1], Dense):
            raise SpecError("the last layer must be the dense classifier head")
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.out_shape(shape)
            except SpecError as exc:
                raise SpecError(f"layer {i} ({layer.kind}): {exc}") from None
        return shape

    @property
    def num_outputs(self) -> int:
        return self.layers[-1].out_features

    def with_activation(self, activation) -> NetworkSpec:
        layers = tuple(
            Activation(activation, layer.variant) if isinstance(layer, Activation) else layer
            for layer in self.layers
        )
        return NetworkSpec(layers, self.input_shape, self.initializer, self.seed)

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "initializer": self.initializer,
            "seed": self.seed,
            "layers": [layer.describe() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> NetworkSpec:
        return cls(
            layers=tuple(layer_from_dict(x) for x in d["layers"]),
            input_shape=tuple(d["input_shape"]),
            initializer=d.get("initializer", "glorot_uniform"),
            seed=int(d.get("seed", 0)),
        )


@dataclass
class Tape:
    caches: list[Any]
    logits: np.ndarray
    train: bool


@dataclass
class Network:
    spec: NetworkSpec
    params: list[Params]
    state: list[dict]
    dtype: Any = np.float64

    def forward(self, batch: np.ndarray, mode: str = "eval",
                rng: np.random.Generator | None = None) -> tuple[np.ndarray, Tape]:
        """Run the layer stack. ``mode`` is ``"train"`` or ``"eval"``."""
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        if tuple(batch.shape[1:]) != self.spec.input_shape:
            raise ValueError(f"batch shape {batch.shape[1:]} does not match input {self.spec.input_shape}")
        train = mode == "train"
        x = np.asarray(batch, dtype=self.dtype)
        caches = []
        for layer, p, s in zip(self.spec.layers, self.params, self.state):
            x, cache = layer.forward(p, s, x, train, rng)
            caches.append(cache)
        return x, Tape(caches, x, train)

    def backward(self, tape: Tape, labels: np.ndarray) -> tuple[float, list[Params]]:
        """Mean softmax cross-entropy and its gradient w.r.t. every parameter."""
        labels = np.asarray(labels)
        if labels.shape[0] != tape.logits.shape[0]:
            raise ValueError(f"{labels.shape[0]} labels for a batch of {tape.logits.shape[0]}")
        loss, dy = softmax_cross_entropy(tape.logits, labels)
        return loss, self.backward_from(tape, dy)

    def backward_from(self, tape: Tape, dy: np.ndarray) -> list[Params]:
        grads: list[Params] = [None] * len(self.spec.layers)
        for i in reversed(range(len(self.spec.layers))):
            dy, grads[i] = self.spec.layers[i].backward(self.params[i], tape.caches[i], dy)
        return grads

    def predict(self, x: np.ndarray, batch_size: int = 1000) -> np.ndarray:
        return np.concatenate([self.forward(x[i:i + batch_size])[0] for i in range(0, len(x), batch_size)])

    def evaluate(self, x: np.ndarray, labels: np.ndarray, batch_size: int = 1000) -> tuple[float, float]:
        """Whole-set mean loss and accuracy in eval mode."""
        total_loss, correct = 0.0, 0
        for i in range(0, len(x), batch_size):
            logits, _ = self.forward(x[i:i + batch_size])
            y = labels[i:i + batch_size]
            loss, _ = softmax_cross_entropy(logits, y)
            total_loss += loss * len(y)
            correct += int((logits.argmax(axis=1) == y).sum())
        return total_loss / len(x), correct / len(x)

    def named_params(self) -> Iterator[tuple[str, np.ndarray]]:
        for i, p in enumerate(self.params):
            for name, arr in p.items():
                yield f"{i}.{name}", arr

    @property
    def param_count(self) -> int:
        return sum(a.size for _, a in self.named_params())

    def copy(self) -> Network:
        return Network(
            self.spec,
            [{k: v.copy() for k, v in p.items()} for p in self.params],
            [{k: v.copy() for k, v in s.items()} for s in self.state],
            self.dtype,
        )

    def save(self, path: str | Path) -> None:
        arrays = {f"param:{k}": v for k, v in self.named_params()}
        for i, s in enumerate(self.state):
            arrays.update({f"state:{i}.{k}": v for k, v in s.items()})
        meta = {"spec": self.spec.to_dict(), "dtype": np.dtype(self.dtype).name}
        arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path: str | Path) -> Network:
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            spec = NetworkSpec.from_dict(meta["spec"])
            dtype = np.dtype(meta["dtype"]).type
            net = init_params(spec, dtype)
            for key in data.files:
                kind, _, rest = key.partition(":")
                if kind not in ("param", "state"):
                    continue
                idx, _, name = rest.partition(".")
                target = net.params if kind == "param" else net.state
                target[int(idx)][name] = data[key].astype(dtype)
        return net


def init_params(spec: NetworkSpec, dtype=np.float64) -> Network:
    """Draw parameters for ``spec`` from its initializer and seed. Biases start at zero."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    params, state = [], []
    for layer in spec.layers:
        p, s = layer.init(rng, spec.initializer, dtype)
        params.append(p)
        state.append(s)
    return Network(spec, params, state, dtype)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    if n == 0:
        raise ValueError("cross-entropy of an empty batch is undefined")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_p = z - log_norm
    rows = np.arange(n)
    loss = -float(log_p[rows, labels].mean())
    d = np.exp(log_p)
    d[rows, labels] -= 1.0
    return loss, d / n


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_param: dict[str, float] = field(default_factory=dict)
    n_params: int = 0


def gradcheck(net: Network, x: np.ndarray, labels: np.ndarray, h: float = 1e-5,
              mode: str = "eval", floor: float = 1e-4) -> GradCheckResult:
    """Compare backprop gradients against central differences for every parameter.

    The error for one parameter tensor is
    ``|g - g_fd|_2 / max(|g|_2 + |g_fd|_2, floor)``; the result reports the worst
    tensor. The floor keeps identically-zero gradients (a bias feeding batch
    norm) from turning difference noise into a relative error of 1. ``mode="train"`` exercises batch
    statistics; dropout layers are not supported there since masks would differ
    between evaluations.
    """
    if net.dtype != np.float64:
        raise ValueError("gradient checks need a float64 network")
    net = net.copy()
    snapshot = [{k: v.copy() for k, v in s.items()} for s in net.state]

    def loss_at() -> float:
        for s, snap in zip(net.state, snapshot):
            for k in snap:
                s[k] = snap[k].copy()
        logits, _ = net.forward(x, mode)
        return softmax_cross_entropy(logits, labels)[0]

    logits, tape = net.forward(x, mode)
    _, grads = net.backward(tape, labels)
    result = GradCheckResult(0.0, n_params=net.param_count)
    for i, p in enumerate(net.params):
        for name, arr in p.items():
            numeric = np.zeros_like(arr)
            flat, nflat = arr.reshape(-1), numeric.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                up = loss_at()
                flat[j] = orig - h
                down = loss_at()
                flat[j] = orig
                nflat[j] = (up - down) / (2 * h)
            analytic = grads[i][name]
            denom = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), floor)
            err = float(np.linalg.norm(analytic - numeric) / denom)
            result.per_param[f"{i}.{name}"] = err
            result.max_rel_error = max(result.max_rel_error, err)
    return result
