"""Network recipes used by the ablation experiments."""

from __future__ import annotations

from ..activations import ActivationKind
from .layers import Activation, BatchNorm, Conv2D, Dense, Dropout, Flatten, MaxPool
from .network import NetworkSpec

MNIST_SHAPE = (28, 28, 1)
CIFAR_SHAPE = (32, 32, 3)


def build_mlp(
    depth: int,
    width: int = 500,
    activation: ActivationKind | None = None,
    *,
    input_shape=MNIST_SHAPE,
    num_classes: int = 10,
    dropout: float = 0.25,
    initializer: str = "glorot_uniform",
    seed: int = 0,
) -> NetworkSpec:
    """``depth`` blocks of Dense -> BatchNorm -> Activation -> Dropout, then a dense head.

    No residual connections. The first dense layer flattens image inputs.
    """
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    if activation is None:
        raise ValueError("an activation is required")
    in_features = 1
    for d in input_shape:
        in_features *= d
    layers = []
    for _ in range(depth):
        layers += [Dense(in_features, width), BatchNorm(width), Activation(activation), Dropout(dropout)]
        in_features = width
    layers.append(Dense(width, num_classes))
    return NetworkSpec(tuple(layers), tuple(input_shape), initializer, seed)


def _pooled(size: int, times: int) -> int:
    for _ in range(times):
        size //= 2
    return size


def build_cnn6(
    activation: ActivationKind,
    *,
    input_shape=CIFAR_SHAPE,
    channels: tuple[int, int, int] = (32, 64, 128),
    hidden: int = 128,
    num_classes: int = 10,
    initializer: str = "glorot_uniform",
    seed: int = 0,
) -> NetworkSpec:
    """Six 3x3 same-padded convolutions in pairs, each pair followed by 2x2 pooling.

    Channel plan c1-c1-pool-c2-c2-pool-c3-c3-pool, then Dense(hidden) and the head.
    ``channels`` and ``hidden`` may be shrunk for quick runs; the plan stays fixed.
    """
    h, w, c = input_shape
    layers = []
    in_ch = c
    for ch in channels:
        for _ in range(2):
            layers += [Conv2D(in_ch, ch, 3), Activation(activation)]
            in_ch = ch
        layers.append(MaxPool(2))
    flat = _pooled(h, 3) * _pooled(w, 3) * in_ch
    layers += [Flatten(), Dense(flat, hidden), Activation(activation), Dense(hidden, num_classes)]
    return NetworkSpec(tuple(layers), tuple(input_shape), initializer, seed)


def build_cnn5(
    activation: ActivationKind,
    *,
    input_shape=MNIST_SHAPE,
    channels: tuple[int, int, int] = (16, 32, 32),
    hidden: int = 64,
    num_classes: int = 10,
    initializer: str = "glorot_uniform",
    seed: int = 0,
) -> NetworkSpec:
    """Three convolutions and two dense layers; the noise-robustness network."""
    h, w, c = input_shape
    c1, c2, c3 = channels
    layers = [
        Conv2D(c, c1, 3), Activation(activation), MaxPool(2),
        Conv2D(c1, c2, 3), Activation(activation), MaxPool(2),
        Conv2D(c2, c3, 3), Activation(activation),
        Flatten(),
        Dense(_pooled(h, 2) * _pooled(w, 2) * c3, hidden), Activation(activation),
        Dense(hidden, num_classes),
    ]
    return NetworkSpec(tuple(layers), tuple(input_shape), initializer, seed)


def build_probe_mlp(
    activation: ActivationKind,
    depth: int = 5,
    width: int = 64,
    *,
    in_features: int = 2,
    out_features: int = 1,
    initializer: str = "glorot_uniform",
    seed: int = 0,
) -> NetworkSpec:
    """Plain fully connected stack ``in -> width -> ... -> out`` with ``depth`` dense layers."""
    if depth < 2:
        raise ValueError("depth must be >= 2")
    layers = [Dense(in_features, width), Activation(activation)]
    for _ in range(depth - 2):
        layers += [Dense(width, width), Activation(activation)]
    layers.append(Dense(width, out_features))
    return NetworkSpec(tuple(layers), (in_features,), initializer, seed)
