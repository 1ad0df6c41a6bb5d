"""Layer descriptors with hand-written forward and backward passes.

Descriptors are immutable and hold no parameters. Parameters live in a dict
owned by the network, which keeps perturbation (loss slices) and checkpointing
trivial. Tensors are channels-last: dense inputs are ``(N, ...)`` and flattened
on entry, image tensors are ``(N, H, W, C)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, ClassVar

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .. import kernels
from ..activations import ActivationKind

Params = dict[str, np.ndarray]
Shape = tuple[int, ...]


class SpecError(ValueError):
    """Layer list does not compose, or a layer is misconfigured."""


def _fans(shape: Shape) -> tuple[int, int]:
    if len(shape) == 2:
        return shape[0], shape[1]
    k_h, k_w, c_in, c_out = shape
    return k_h * k_w * c_in, k_h * k_w * c_out


def init_weight(shape: Shape, initializer: str, rng: np.random.Generator, dtype) -> np.ndarray:
    """Glorot uniform, LeCun normal or He uniform draw for a weight tensor."""
    fan_in, fan_out = _fans(shape)
    if initializer == "glorot_uniform":
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=shape)
    elif initializer == "lecun_normal":
        w = rng.normal(0.0, np.sqrt(1.0 / fan_in), size=shape)
    elif initializer == "he_uniform":
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=shape)
    elif initializer == "zeros":
        w = np.zeros(shape)
    else:
        raise SpecError(f"unknown initializer {initializer!r}")
    return w.astype(dtype)


@dataclass(frozen=True)
class Layer:
    kind: ClassVar[str] = "layer"
    has_params: ClassVar[bool] = False

    def out_shape(self, in_shape: Shape) -> Shape:
        return in_shape

    def init(self, rng: np.random.Generator, initializer: str, dtype) -> tuple[Params, dict]:
        """Return (trainable params, non-trainable state)."""
        return {}, {}

    def forward(self, params: Params, state: dict, x: np.ndarray, train: bool,
                rng: np.random.Generator | None) -> tuple[np.ndarray, Any]:
        raise NotImplementedError

    def backward(self, params: Params, cache: Any, dy: np.ndarray) -> tuple[np.ndarray, Params]:
        raise NotImplementedError

    def describe(self) -> dict:
        d = {"type": self.kind}
        d.update(self.__dict__)
        return d


@dataclass(frozen=True)
class Dense(Layer):
    in_features: int
    out_features: int
    kind: ClassVar[str] = "dense"
    has_params: ClassVar[bool] = True

    def out_shape(self, in_shape):
        if int(np.prod(in_shape)) != self.in_features:
            raise SpecError(f"dense expects {self.in_features} inputs, got shape {in_shape}")
        return (self.out_features,)

    def init(self, rng, initializer, dtype):
        w = init_weight((self.in_features, self.out_features), initializer, rng, dtype)
        return {"W": w, "b": np.zeros(self.out_features, dtype=dtype)}, {}

    def forward(self, params, state, x, train, rng):
        x2 = x.reshape(x.shape[0], -1)
        return x2 @ params["W"] + params["b"], (x2, x.shape)

    def backward(self, params, cache, dy):
        x2, in_shape = cache
        grads = {"W": x2.T @ dy, "b": dy.sum(axis=0)}
        return (dy @ params["W"].T).reshape(in_shape), grads


def _same_pad(k: int) -> int:
    return (k - 1) // 2


@dataclass(frozen=True)
class Conv2D(Layer):
    in_ch: int
    out_ch: int
    k: int = 3
    stride: int = 1
    pad: int | None = None  # None means "same" padding for stride 1
    kind: ClassVar[str] = "conv2d"
    has_params: ClassVar[bool] = True

    @property
    def padding(self) -> int:
        return _same_pad(self.k) if self.pad is None else self.pad

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[2] != self.in_ch:
            raise SpecError(f"conv2d expects (H, W, {self.in_ch}), got {in_shape}")
        h, w, _ = in_shape
        p = self.padding
        ho = (h + 2 * p - self.k) // self.stride + 1
        wo = (w + 2 * p - self.k) // self.stride + 1
        if ho < 1 or wo < 1:
            raise SpecError(f"conv2d output would be empty for input {in_shape}")
        return (ho, wo, self.out_ch)

    def init(self, rng, initializer, dtype):
        w = init_weight((self.k, self.k, self.in_ch, self.out_ch), initializer, rng, dtype)
        return {"W": w, "b": np.zeros(self.out_ch, dtype=dtype)}, {}

    def _padded(self, x):
        p = self.padding
        if p == 0:
            return x
        return np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))

    def _cols(self, xp):
        k, s = self.k, self.stride
        win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s]
        n, ho, wo = win.shape[:3]
        # (N, Ho, Wo, C, k, k) -> (N, Ho, Wo, k, k, C) to match W's (k, k, C, out) layout
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, -1)
        return cols, (n, ho, wo)

    def forward(self, params, state, x, train, rng):
        xp = self._padded(x)
        cols, (n, ho, wo) = self._cols(xp)
        y = cols @ params["W"].reshape(-1, self.out_ch) + params["b"]
        return y.reshape(n, ho, wo, self.out_ch), (cols, x.shape, xp.shape)

    def backward(self, params, cache, dy):
        cols, in_shape, padded_shape = cache
        k, s, p = self.k, self.stride, self.padding
        n, ho, wo, _ = dy.shape
        dy2 = dy.reshape(-1, self.out_ch)
        w2 = params["W"].reshape(-1, self.out_ch)
        grads = {"W": (cols.T @ dy2).reshape(params["W"].shape), "b": dy2.sum(axis=0)}
        dcols = (dy2 @ w2.T).reshape(n, ho, wo, k, k, self.in_ch)
        dxp = np.zeros(padded_shape, dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + s * ho:s, j:j + s * wo:s, :] += dcols[:, :, :, i, j, :]
        h, w = in_shape[1], in_shape[2]
        return dxp[:, p:p + h, p:p + w, :], grads


def conv2d_reference(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Direct loop convolution, used to check the im2col path."""
    n, h, wd, c = x.shape
    k = w.shape[0]
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.empty((n, ho, wo, w.shape[3]), dtype=np.result_type(x, w))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, i * stride:i * stride + k, j * stride:j * stride + k, :]
            out[:, i, j, :] = np.tensordot(patch, w, axes=([1, 2, 3], [0, 1, 2])) + b
    return out


@dataclass(frozen=True)
class BatchNorm(Layer):
    """Normalizes over every axis but the last (features or channels)."""

    features: int
    eps: float = 1e-5
    momentum: float = 0.9
    kind: ClassVar[str] = "batchnorm"
    has_params: ClassVar[bool] = True

    def out_shape(self, in_shape):
        if in_shape[-1] != self.features:
            raise SpecError(f"batchnorm expects {self.features} features, got shape {in_shape}")
        return in_shape

    def init(self, rng, initializer, dtype):
        params = {"gamma": np.ones(self.features, dtype=dtype), "beta": np.zeros(self.features, dtype=dtype)}
        state = {"running_mean": np.zeros(self.features, dtype=dtype),
                 "running_var": np.ones(self.features, dtype=dtype)}
        return params, state

    def forward(self, params, state, x, train, rng):
        axes = tuple(range(x.ndim - 1))
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = x.size // self.features
            unbiased = var * (m / (m - 1)) if m > 1 else var
            state["running_mean"] = self.momentum * state["running_mean"] + (1 - self.momentum) * mean
            state["running_var"] = self.momentum * state["running_var"] + (1 - self.momentum) * unbiased
        else:
            mean, var = state["running_mean"], state["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        return params["gamma"] * xhat + params["beta"], (xhat, inv_std, train)

    def backward(self, params, cache, dy):
        xhat, inv_std, train = cache
        axes = tuple(range(dy.ndim - 1))
        grads = {"gamma": (dy * xhat).sum(axis=axes), "beta": dy.sum(axis=axes)}
        dxhat = dy * params["gamma"]
        if not train:
            return dxhat * inv_std, grads
        m = dy.size // self.features
        dx = (inv_std / m) * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
        return dx, grads


@dataclass(frozen=True)
class Dropout(Layer):
    rate: float = 0.25
    kind: ClassVar[str] = "dropout"

    def out_shape(self, in_shape):
        if not 0.0 <= self.rate < 1.0:
            raise SpecError(f"dropout rate must lie in [0, 1), got {self.rate}")
        return in_shape

    def forward(self, params, state, x, train, rng):
        if not train or self.rate == 0.0:
            return x, None
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        keep = 1.0 - self.rate
        mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * mask, mask

    def backward(self, params, mask, dy):
        return (dy if mask is None else dy * mask), {}


@dataclass(frozen=True)
class MaxPool(Layer):
    k: int = 2
    stride: int | None = None
    kind: ClassVar[str] = "maxpool"

    @property
    def step(self) -> int:
        return self.k if self.stride is None else self.stride

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise SpecError(f"maxpool expects (H, W, C), got {in_shape}")
        h, w, c = in_shape
        ho, wo = (h - self.k) // self.step + 1, (w - self.k) // self.step + 1
        if ho < 1 or wo < 1:
            raise SpecError(f"maxpool output would be empty for input {in_shape}")
        return (ho, wo, c)

    def forward(self, params, state, x, train, rng):
        k, s = self.k, self.step
        win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::s, ::s]
        flat = win.reshape(win.shape[:4] + (k * k,))
        idx = flat.argmax(axis=-1)
        y = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
        return y, (idx, x.shape)

    def backward(self, params, cache, dy):
        idx, in_shape = cache
        k, s = self.k, self.step
        n, ho, wo, c = dy.shape
        dx = np.zeros(in_shape, dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dx[:, i:i + s * ho:s, j:j + s * wo:s, :] += dy * (idx == i * k + j)
        return dx, {}


@dataclass(frozen=True)
class Flatten(Layer):
    kind: ClassVar[str] = "flatten"

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, params, state, x, train, rng):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, params, in_shape, dy):
        return dy.reshape(in_shape), {}


@dataclass(frozen=True)
class Activation(Layer):
    """Elementwise activation; derivatives come from the kernel layer."""

    activation: ActivationKind
    variant: str = "naive"
    kind: ClassVar[str] = "activation"

    def forward(self, params, state, x, train, rng):
        flat = np.ascontiguousarray(x).reshape(-1)
        out = np.empty_like(flat)
        cache = kernels.apply_forward(self.activation, flat, out, self.variant)
        return out.reshape(x.shape), cache

    def backward(self, params, cache, dy):
        up = np.ascontiguousarray(dy).reshape(-1)
        dx = np.empty_like(up)
        kernels.apply_backward(self.activation, cache, up, dx)
        return dx.reshape(dy.shape), {}

    def describe(self):
        return {"type": self.kind, "activation": str(self.activation), "variant": self.variant}


LAYER_TYPES: dict[str, type[Layer]] = {
    cls.kind: cls for cls in (Dense, Conv2D, BatchNorm, Dropout, MaxPool, Flatten, Activation)
}


def layer_from_dict(d: dict) -> Layer:
    d = dict(d)
    cls = LAYER_TYPES.get(d.pop("type", None))
    if cls is None:
        raise SpecError(f"unknown layer descriptor {d}")
    if cls is Activation:
        d["activation"] = ActivationKind.parse(d["activation"])
    return cls(**d)
