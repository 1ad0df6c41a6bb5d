"""Minimal deterministic numpy training engine."""

from .builders import build_cnn5, build_cnn6, build_mlp, build_probe_mlp
from .layers import Activation, BatchNorm, Conv2D, Dense, Dropout, Flatten, MaxPool, SpecError
from .network import (
    GradCheckResult,
    Network,
    NetworkSpec,
    Tape,
    gradcheck,
    init_params,
    softmax,
    softmax_cross_entropy,
)
from .optim import SGD, Adam, RMSProp, optimizer_from_dict
from .train import EpochRecord, RunResult, StatSummary, TrainConfig, aggregate_runs, train

__all__ = [
    "Activation", "Adam", "BatchNorm", "Conv2D", "Dense", "Dropout", "EpochRecord", "Flatten",
    "GradCheckResult", "MaxPool", "Network", "NetworkSpec", "RMSProp", "RunResult", "SGD",
    "SpecError", "StatSummary", "Tape", "TrainConfig", "aggregate_runs", "build_cnn5",
    "build_cnn6", "build_mlp", "build_probe_mlp", "gradcheck", "init_params",
    "optimizer_from_dict", "softmax", "softmax_cross_entropy", "train",
]
