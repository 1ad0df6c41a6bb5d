"""Epoch loop, run records and multi-run aggregation."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .network import Network, NetworkSpec, init_params
from .optim import SGD, OptimizerConfig, Optimizer, optimizer_to_dict

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    optimizer: OptimizerConfig = SGD(lr=0.01, momentum=0.9)
    batch_size: int = 128
    epochs: int = 10
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.optimizer.lr > 0:
            raise ValueError("learning rate must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["optimizer"] = optimizer_to_dict(self.optimizer)
        return d


@dataclass
class EpochRecord:
    train_loss: float
    test_loss: float
    test_acc: float


@dataclass
class RunResult:
    final_test_acc: float
    final_test_loss: float
    per_epoch: list[EpochRecord]
    wall_seconds: float
    seed: int
    diverged: bool = False
    network: Network | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "final_test_acc": self.final_test_acc,
            "final_test_loss": self.final_test_loss,
            "per_epoch": [asdict(e) for e in self.per_epoch],
            "wall_seconds": self.wall_seconds,
            "seed": self.seed,
            "diverged": self.diverged,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def epochs_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "test_loss", "test_acc"])
        for i, e in enumerate(self.per_epoch, 1):
            w.writerow([i, repr(e.train_loss), repr(e.test_loss), repr(e.test_acc)])
        return buf.getvalue()


def train(
    spec: NetworkSpec,
    config: TrainConfig,
    train_x: np.ndarray,
    train_y: np.ndarray,
    test_x: np.ndarray,
    test_y: np.ndarray,
) -> RunResult:
    """Train ``spec`` from scratch and evaluate on the test split after every epoch.

    Shuffling and dropout masks come from ``config.seed``; weights from
    ``spec.seed``. A non-finite training loss stops the run and marks it diverged.
    """
    if len(train_x) == 0 or len(test_x) == 0:
        raise ValueError("train and test splits must be non-empty")
    dtype = np.dtype(config.dtype).type
    net = init_params(spec, dtype)
    opt = Optimizer(config.optimizer)
    rng = np.random.default_rng(config.seed)
    train_x = np.asarray(train_x, dtype=dtype)
    test_x = np.asarray(test_x, dtype=dtype)
    n = len(train_x)
    records: list[EpochRecord] = []
    diverged = False
    start = time.perf_counter()
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for i in range(0, n, config.batch_size):
            idx = order[i:i + config.batch_size]
            if len(idx) < 2 and n >= 2:
                continue  # batch statistics need two samples
            _, tape = net.forward(train_x[idx], "train", rng)
            loss, grads = net.backward(tape, train_y[idx])
            if not math.isfinite(loss):
                diverged = True
                break
            opt.step(net.params, grads)
            total += loss * len(idx)
            seen += len(idx)
        if diverged:
            log.warning("run diverged in epoch %d (seed %d)", epoch + 1, config.seed)
            break
        test_loss, test_acc = net.evaluate(test_x, test_y)
        records.append(EpochRecord(total / max(seen, 1), test_loss, test_acc))
        log.debug("epoch %d: train %.4f test %.4f acc %.4f", epoch + 1, records[-1].train_loss, test_loss, test_acc)
        if not math.isfinite(test_loss):
            diverged = True
            break
    wall = time.perf_counter() - start
    if diverged:
        return RunResult(math.nan, math.nan, records, wall, config.seed, True, net)
    last = records[-1]
    return RunResult(last.test_acc, last.test_loss, records, wall, config.seed, False, net)


@dataclass
class StatSummary:
    n_runs: int
    mean_acc: float
    mean_loss: float
    std_acc: float
    n_diverged: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def aggregate_runs(results: Sequence[RunResult]) -> StatSummary:
    """Mean accuracy, mean loss and unbiased accuracy std over final-epoch metrics.

    Diverged runs are counted but left out of the statistics.
    """
    ok = [r for r in results if not r.diverged]
    if len(ok) < 2:
        raise ValueError(f"need at least 2 finished runs for a standard deviation, got {len(ok)}")
    accs = np.array([r.final_test_acc for r in ok])
    losses = np.array([r.final_test_loss for r in ok])
    return StatSummary(
        n_runs=len(results),
        mean_acc=float(accs.mean()),
        mean_loss=float(losses.mean()),
        std_acc=float(accs.std(ddof=1)),
        n_diverged=len(results) - len(ok),
    )
