"""Optimizers updating a network's parameter dicts in place."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import Params


@dataclass(frozen=True)
class SGD:
    lr: float = 0.01
    momentum: float = 0.0
    name = "sgd"


@dataclass(frozen=True)
class RMSProp:
    lr: float = 1e-3
    rho: float = 0.9
    eps: float = 1e-7
    name = "rmsprop"


@dataclass(frozen=True)
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    name = "adam"


OptimizerConfig = SGD | RMSProp | Adam


def optimizer_from_dict(d: dict) -> OptimizerConfig:
    d = dict(d)
    kind = d.pop("type", "sgd").lower()
    cls = {"sgd": SGD, "rmsprop": RMSProp, "adam": Adam}.get(kind)
    if cls is None:
        raise ValueError(f"unknown optimizer {kind!r}")
    opt = cls(**d)
    if not opt.lr > 0:
        raise ValueError(f"learning rate must be positive, got {opt.lr}")
    return opt


def optimizer_to_dict(opt: OptimizerConfig) -> dict:
    return {"type": opt.name, **opt.__dict__}


class Optimizer:
    """Stateful update rule; slots are allocated lazily per parameter."""

    def __init__(self, config: OptimizerConfig):
        self.config = config
        self.slots: dict[tuple[int, str], list[np.ndarray]] = {}
        self.t = 0

    def step(self, params: list[Params], grads: list[Params]) -> None:
        self.t += 1
        cfg = self.config
        for i, (p, g) in enumerate(zip(params, grads)):
            for name, value in p.items():
                grad = g[name]
                key = (i, name)
                if isinstance(cfg, SGD):
                    if cfg.momentum:
                        (v,) = self.slots.setdefault(key, [np.zeros_like(value)])
                        v *= cfg.momentum
                        v -= cfg.lr * grad
                        value += v
                    else:
                        value -= cfg.lr * grad
                elif isinstance(cfg, RMSProp):
                    (sq,) = self.slots.setdefault(key, [np.zeros_like(value)])
                    sq *= cfg.rho
                    sq += (1 - cfg.rho) * grad * grad
                    value -= cfg.lr * grad / (np.sqrt(sq) + cfg.eps)
                else:
                    m, v = self.slots.setdefault(key, [np.zeros_like(value), np.zeros_like(value)])
                    m *= cfg.beta1
                    m += (1 - cfg.beta1) * grad
                    v *= cfg.beta2
                    v += (1 - cfg.beta2) * grad * grad
                    m_hat = m / (1 - cfg.beta1 ** self.t)
                    v_hat = v / (1 - cfg.beta2 ** self.t)
                    value -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
