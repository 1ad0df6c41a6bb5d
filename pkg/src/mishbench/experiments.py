"""Experiment runners wiring the library into reproducible, file-producing runs.

Each ``run_*`` function takes a validated :class:`ExperimentConfig`, writes its
outputs under ``config.output_dir`` (every file with a ``.meta.json`` sidecar that
holds the resolved config) and returns an in-memory summary.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import activations as act
from . import kernels
from .activations import ActivationKind
from .config import ConfigError, ExperimentConfig
from .data import (
    Dataset,
    corrupt_gaussian,
    load_cifar10_binary,
    load_digits_split,
    load_idx,
    load_mnist_dir,
)
from .landscape import (
    GridSpec,
    export_field,
    loss_slice,
    output_landscape,
    roughness,
    total_variation,
)
from .nn import (
    SGD,
    Adam,
    Dense,
    NetworkSpec,
    RMSProp,
    RunResult,
    TrainConfig,
    aggregate_runs,
    build_cnn5,
    build_cnn6,
    build_mlp,
    gradcheck,
    init_params,
    train,
)
from .nn.layers import Activation, BatchNorm
from .nn.network import Network

log = logging.getLogger(__name__)

DIVERGED = "diverged"


class CheckFailure(RuntimeError):
    """One or more verification checks failed; the report was still written."""


# --------------------------------------------------------------------------
# Output helpers
# --------------------------------------------------------------------------


class Outputs:
    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.dir = Path(config.output_dir)
        self.written: list[Path] = []

    def _sidecar(self, path: Path) -> None:
        meta = {"file": path.name, "config": self.config.model_dump(mode="json"), "seeds": self.config.seeds}
        Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2))

    def path(self, name: str) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        return self.dir / name

    def text(self, name: str, content: str) -> Path:
        p = self.path(name)
        p.write_text(content)
        self.done(p)
        return p

    def json(self, name: str, obj) -> Path:
        return self.text(name, json.dumps(obj, indent=2, default=_json_default) + "\n")

    def csv(self, name: str, header: Iterable[str], rows: Iterable[Iterable]) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(header))
        w.writerows(rows)
        return self.text(name, buf.getvalue())

    def done(self, path: Path) -> None:
        self._sidecar(path)
        self.written.append(path)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def _fmt(v: float) -> str:
    return DIVERGED if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def _parallel_map(fn: Callable, cells: list, workers: int) -> list:
    """Run ``fn`` over ``cells``; results come back in cell order whatever the worker count."""
    if workers <= 1 or len(cells) <= 1:
        return [fn(c) for c in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, cells))


# --------------------------------------------------------------------------
# Data and training helpers
# --------------------------------------------------------------------------


def load_data(config: ExperimentConfig) -> tuple[Dataset, Dataset]:
    d = config.data
    if d is None:
        raise ConfigError("this experiment needs a 'data' block")
    if d.kind == "digits":
        return load_digits_split(d.test_fraction, d.split_seed)
    if d.kind == "cifar10":
        return load_cifar10_binary(d.dir, "train"), load_cifar10_binary(d.dir, "test")
    if d.dir is not None:
        return load_mnist_dir(d.dir, "train"), load_mnist_dir(d.dir, "test")
    return (load_idx(d.train_images, d.train_labels, "train"),
            load_idx(d.test_images, d.test_labels, "test"))


@dataclass(frozen=True)
class Defaults:
    model: str
    epochs: int
    optimizer: object
    activations: tuple[str, ...]
    width: int = 128


DEFAULTS = {
    "train": Defaults("mlp", 10, SGD(0.01, 0.9), ("mish",)),
    "sweep-depth": Defaults("mlp", 100, SGD(0.01, 0.9), ("mish", "swish", "relu")),
    "sweep-noise": Defaults("cnn5", 40, SGD(0.01, 0.9), ("mish", "swish", "relu")),
    "sweep-init": Defaults("cnn6", 10, RMSProp(1e-3, 0.9), ("mish", "swish")),
    "stats": Defaults("cnn5", 50, Adam(1e-3), ("mish", "swish", "gelu", "relu")),
}


def _train_config(config: ExperimentConfig, seed: int) -> TrainConfig:
    d = DEFAULTS[config.experiment]
    opt = config.optimizer.build() if config.optimizer else d.optimizer
    return TrainConfig(opt, config.batch_size, config.epochs or d.epochs, seed, config.dtype)


def _model_spec(config: ExperimentConfig, activation: ActivationKind, input_shape, seed: int,
                *, depth: int = 5, initializer: str = "glorot_uniform", num_classes: int = 10) -> NetworkSpec:
    d = DEFAULTS[config.experiment]
    model = config.model or d.model
    if model == "mlp":
        return build_mlp(depth, config.width or d.width, activation, input_shape=input_shape,
                         num_classes=num_classes, initializer=initializer, seed=seed)
    kw = {}
    if config.channels:
        kw["channels"] = tuple(config.channels)
    if config.hidden:
        kw["hidden"] = config.hidden
    builder = build_cnn5 if model == "cnn5" else build_cnn6
    if model == "cnn6" and not config.paper_scale:
        # desk scale halves the channel plan
        kw.setdefault("channels", (16, 32, 64))
        kw.setdefault("hidden", 64)
    return builder(activation, input_shape=input_shape, num_classes=num_classes,
                   initializer=initializer, seed=seed, **kw)


@dataclass(frozen=True)
class Cell:
    key: tuple
    spec: NetworkSpec
    train_cfg: TrainConfig
    train_set: Dataset = field(repr=False)
    test_set: Dataset = field(repr=False)


def _run_cell(cell: Cell) -> RunResult:
    tr, te = cell.train_set, cell.test_set
    return train(cell.spec, cell.train_cfg, tr.images, tr.labels, te.images, te.labels)


def _strip(result: RunResult) -> RunResult:
    result.network = None
    return result


# --------------------------------------------------------------------------
# gradcheck
# --------------------------------------------------------------------------


@dataclass
class Check:
    name: str
    max_error: float
    tolerance: float
    kind: str = ""

    @property
    def passed(self) -> bool:
        return bool(self.max_error <= self.tolerance)

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "max_error": self.max_error,
                "tolerance": self.tolerance, "passed": self.passed}


def _kink_mask(kind: ActivationKind, xs: np.ndarray, window: float) -> np.ndarray:
    keep = np.ones_like(xs, dtype=bool)
    for k in kind.kinks:
        keep &= np.abs(xs - k) > window
    return keep


def scalar_checks(derivative_overrides: dict[str, Callable] | None = None) -> list[Check]:
    """The scalar-activation invariant suite. ``derivative_overrides`` swaps in a
    (possibly wrong) derivative per activation name, for fault-injection tests."""
    overrides = derivative_overrides or {}
    checks = []

    xs = np.linspace(-20.0, 20.0, 10001)
    decomposed = np.array([act.mish_grad_decomposed(x).total for x in xs])
    checks.append(Check("mish_rational_vs_decomposed", float(np.max(np.abs(act.mish_grad_rational(xs) - decomposed))),
                        1e-9, "mish"))
    checks.append(Check("mish_grad_at_zero", abs(act.grad(act.MISH, 0.0) - 0.6), 1e-12, "mish"))

    h = 1e-5
    grid = np.linspace(-6.0, 6.0, 1001)
    for kind in act.ALL_KINDS:
        x = grid[_kink_mask(kind, grid, 2 * h)]
        dfun = overrides.get(kind.name, lambda v, k=kind: act.grad_array(k, v))
        err = float(np.max(np.abs(dfun(x) - act.finite_diff(kind, x, h))))
        checks.append(Check("finite_difference", err, 1e-6, kind.name))

    for kind in (act.MISH, act.SWISH):
        err = float(np.max(np.abs(act.grad2(kind, grid) - act.finite_diff2(kind, grid, 1e-4))))
        checks.append(Check("second_derivative", err, 1e-4, kind.name))

    x_min, f_min = act.minimum_of(act.MISH)
    checks.append(Check("mish_f_min_in_range", max(0.0, -0.3095 - f_min, f_min + 0.3080), 0.0, "mish"))
    checks.append(Check("mish_x_min_in_range", max(0.0, -1.1930 - x_min, x_min + 1.1918), 0.0, "mish"))

    wide = np.linspace(-100.0, 100.0, 200001)
    checks.append(Check("mish_bounded_below", max(0.0, -(act.evaluate(act.MISH, wide).min() + 0.30885)), 1e-6, "mish"))
    big = np.linspace(20.0, 1e4, 10001)
    checks.append(Check("mish_positive_saturation", float(np.max(np.abs(act.evaluate(act.MISH, big) - big))), 1e-7, "mish"))
    neg = np.linspace(-1e4, -40.0, 10001)
    checks.append(Check("mish_negative_saturation", float(np.max(np.abs(act.evaluate(act.MISH, neg)))), 1e-15, "mish"))

    single = np.linspace(-1e4, 1e4, 200001).astype(np.float32)
    bad = 0
    for kind in act.ALL_KINDS:
        bad += int(np.sum(~np.isfinite(act.forward_array(kind, single))))
        bad += int(np.sum(~np.isfinite(act.grad_array(kind, single))))
    checks.append(Check("single_precision_finite", float(bad), 0.0))
    return checks


def network_checks(kinds: Iterable[ActivationKind] = (act.MISH, act.SWISH, act.GELU, act.TANH_SOFTPLUS, act.RELU),
                   seed: int = 0) -> list[Check]:
    """Whole-network gradient checks in double precision."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(8, 12))
    y = rng.integers(0, 4, size=8)
    checks = []
    for kind in kinds:
        layers = (Dense(12, 24), BatchNorm(24), Activation(kind), Dense(24, 16), Activation(kind), Dense(16, 4))
        net = init_params(NetworkSpec(layers, (12,), seed=seed), np.float64)
        res = gradcheck(net, x, y, mode="train")
        checks.append(Check("network_gradcheck", res.max_rel_error, 1e-5, kind.name))
    return checks


def run_gradcheck(config: ExperimentConfig, derivative_overrides: dict[str, Callable] | None = None) -> dict:
    kinds = config.activation_kinds(["mish", "swish", "gelu", "tanh_softplus", "relu"])
    checks = scalar_checks(derivative_overrides) + network_checks(kinds, config.seeds[0])
    report = {"passed": all(c.passed for c in checks), "checks": [c.to_dict() for c in checks],
              "failed": sorted({c.kind or c.name for c in checks if not c.passed})}
    Outputs(config).json("gradcheck_report.json", report)
    if not report["passed"]:
        raise CheckFailure("gradient checks failed for: " + ", ".join(report["failed"]))
    return report


# --------------------------------------------------------------------------
# bench
# --------------------------------------------------------------------------


def bench_orderings(reports: list[kernels.BenchReport], precision: str = "single") -> dict:
    get = lambda k, v, p: kernels.find_report(reports, k, v, p, precision).mean_ns  # noqa: E731
    relu_fwd, mish_fwd = get("relu", "naive", "forward"), get("mish", "naive", "forward")
    sp_fwd = get("softplus", "naive", "forward")
    fused_bwd, naive_bwd = get("mish", "fused", "backward"), get("mish", "naive", "backward")
    return {
        "relu_fwd_lt_mish_fwd": relu_fwd < mish_fwd,
        "softplus_fwd_lt_mish_fwd": sp_fwd < mish_fwd,
        "fused_bwd_ratio": fused_bwd / naive_bwd,
        "fused_bwd_le_0.8_naive": fused_bwd <= 0.8 * naive_bwd,
    }


def run_bench(config: ExperimentConfig) -> list[kernels.BenchReport]:
    reports = kernels.speed_profile(config.buffer_len, config.n_total, config.warmup,
                                    seed=config.seeds[0], workers=config.workers)
    out = Outputs(config)
    out.text("bench_profile.csv", kernels.profile_csv(reports))
    warnings = [r.to_dict() for r in reports if r.timer_warning]
    for w in warnings:
        log.warning("timer resolution is coarse relative to %s %s %s", w["kind"], w["variant"], w["pass"])
    out.json("bench_summary.json", {"orderings": bench_orderings(reports), "timer_warnings": warnings,
                                    "buffer_len": config.buffer_len})
    return reports


# --------------------------------------------------------------------------
# landscape
# --------------------------------------------------------------------------


def run_landscape(config: ExperimentConfig) -> dict:
    kinds = config.activation_kinds(["relu", "mish", "swish"])
    grid = GridSpec(tuple(config.x_range), tuple(config.y_range), config.resolution)
    export = set(config.export_seeds if config.export_seeds is not None else config.seeds[:1])
    out = Outputs(config)
    table: dict[str, dict[int, dict]] = {k.name: {} for k in kinds}
    for seed in config.seeds:
        for kind in kinds:
            f = output_landscape(kind, seed, grid, config.landscape_depth, config.landscape_width)
            table[kind.name][seed] = {"roughness": roughness(f), "total_variation": total_variation(f),
                                      "diverged": f.diverged}
            if seed in export:
                for ext in ("pgm", "csv"):
                    info = export_field(f, out.path(f"landscape_{kind.name}_{seed}.{ext}"), ext)
                    out.done(Path(info["path"]))
    summary: dict = {"grid": {"x_range": grid.x_range, "y_range": grid.y_range, "resolution": grid.resolution},
                     "fields": table}
    names = [k.name for k in kinds]
    if "relu" in names and "mish" in names:
        wins = sum(table["relu"][s]["roughness"] > table["mish"][s]["roughness"] for s in config.seeds)
        summary["relu_rougher_than_mish"] = {"count": wins, "of": len(config.seeds)}
    if config.loss_slice:
        summary["loss_slice"] = _run_loss_slice(config, out)
    out.json("landscape_summary.json", summary)
    return summary


def _run_loss_slice(config: ExperimentConfig, out: Outputs) -> dict:
    path = Path(config.checkpoint)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    net = Network.load(path)
    _, test = load_data(config)
    lo, hi = config.slice_range
    grid = GridSpec((lo, hi), (lo, hi), config.slice_resolution)
    seed = config.seeds[0]
    f = loss_slice(net, test.images, test.labels, seed, grid, config.eval_samples)
    name = next((str(l.activation) for l in net.spec.layers if isinstance(l, Activation)), "net")
    for ext in ("pgm", "csv"):
        info = export_field(f, out.path(f"lossslice_{name}_{seed}.{ext}"), ext)
        out.done(Path(info["path"]))
    i, j = np.unravel_index(np.nanargmin(f.values), f.values.shape)
    return {
        "checkpoint": str(path),
        "center_loss": f.meta["center_loss"],
        "base_loss": f.meta["base_loss"],
        "center_matches_base": abs(f.meta["center_loss"] - f.meta["base_loss"]) <= 1e-9,
        "argmin": {"alpha": float(grid.xs[j]), "beta": float(grid.ys[i]), "loss": float(f.values[i, j])},
    }


# --------------------------------------------------------------------------
# training experiments
# --------------------------------------------------------------------------


def run_train(config: ExperimentConfig) -> list[RunResult]:
    train_set, test_set = load_data(config)
    kinds = config.activation_kinds(list(DEFAULTS["train"].activations))
    out = Outputs(config)
    results = []
    for kind in kinds:
        for seed in config.seeds:
            spec = _model_spec(config, kind, train_set.shape, seed, num_classes=train_set.num_classes)
            r = train(spec, _train_config(config, seed), train_set.images, train_set.labels,
                      test_set.images, test_set.labels)
            stem = f"train_{kind}_{seed}"
            out.text(f"{stem}.json", r.to_json() + "\n")
            out.text(f"{stem}_epochs.csv", r.epochs_csv())
            ckpt = out.path(f"{stem}.npz")
            r.network.save(ckpt)
            out.done(ckpt)
            results.append(_strip(r))
    return results


DEPTH_HEADER = ("depth", "activation", "seed", "test_acc", "test_loss")


def run_sweep_depth(config: ExperimentConfig) -> list[list]:
    train_set, test_set = load_data(config)
    kinds = config.activation_kinds(list(DEFAULTS["sweep-depth"].activations))
    cells = [
        Cell((depth, kind.name, seed), _model_spec(config, kind, train_set.shape, seed, depth=depth),
             _train_config(config, seed), train_set, test_set)
        for depth in config.depths for kind in kinds for seed in config.seeds
    ]
    results = _parallel_map(_run_cell, cells, config.workers)
    rows = [[*c.key, _fmt(r.final_test_acc), _fmt(r.final_test_loss)]
            for c, r in sorted(zip(cells, results), key=lambda cr: cr[0].key)]
    Outputs(config).csv("sweep_depth.csv", DEPTH_HEADER, rows)
    return rows


NOISE_HEADER = ("sigma", "activation", "seed", "test_loss", "test_acc")


def run_sweep_noise(config: ExperimentConfig) -> list[list]:
    """Train once per (activation, seed) on clean data, then score every noise level.

    Test loss is the whole-set mean. The noise draw for each sigma depends only on
    the seed, so every activation sees the same corrupted images.
    """
    train_set, test_set = load_data(config)
    kinds = config.activation_kinds(list(DEFAULTS["sweep-noise"].activations))
    cells = [
        Cell((kind.name, seed), _model_spec(config, kind, train_set.shape, seed),
             _train_config(config, seed), train_set, test_set)
        for kind in kinds for seed in config.seeds
    ]
    results = _parallel_map(_run_cell_keep_net, cells, config.workers)
    rows = []
    for cell, (r, net) in zip(cells, results):
        name, seed = cell.key
        for sigma in config.sigmas:
            if r.diverged:
                rows.append([repr(sigma), name, seed, DIVERGED, DIVERGED])
                continue
            noisy = corrupt_gaussian(test_set, sigma, seed + 1000003)
            loss, acc = net.evaluate(noisy.images.astype(net.dtype), noisy.labels)
            rows.append([repr(sigma), name, seed, _fmt(loss), _fmt(acc)])
    rows.sort(key=lambda row: (float(row[0]), row[1], row[2]))
    Outputs(config).csv("sweep_noise.csv", NOISE_HEADER, rows)
    return rows


def _run_cell_keep_net(cell: Cell) -> tuple[RunResult, Network]:
    r = _run_cell(cell)
    net = r.network
    return _strip(r), net


INIT_HEADER = ("initializer", "activation", "seed", "test_acc", "test_loss")


def run_sweep_init(config: ExperimentConfig) -> list[list]:
    train_set, test_set = load_data(config)
    kinds = config.activation_kinds(list(DEFAULTS["sweep-init"].activations))
    cells = [
        Cell((init, kind.name, seed),
             _model_spec(config, kind, train_set.shape, seed, initializer=init, num_classes=train_set.num_classes),
             _train_config(config, seed), train_set, test_set)
        for init in config.initializers for kind in kinds for seed in config.seeds
    ]
    results = _parallel_map(_run_cell, cells, config.workers)
    rows = [[*c.key, _fmt(r.final_test_acc), _fmt(r.final_test_loss)]
            for c, r in sorted(zip(cells, results), key=lambda cr: cr[0].key)]
    Outputs(config).csv("sweep_init.csv", INIT_HEADER, rows)
    return rows


STATS_HEADER = ("activation", "mu_acc", "mu_loss", "sigma_acc")
STATS_RUNS_HEADER = ("activation", "seed", "test_acc", "test_loss")


def stats_seeds(config: ExperimentConfig) -> list[int]:
    n = config.n_runs or 5
    if len(config.seeds) >= n:
        return list(config.seeds[:n])
    return [config.seeds[0] + i for i in range(n)]


def run_stats(config: ExperimentConfig) -> dict[str, dict]:
    train_set, test_set = load_data(config)
    kinds = config.activation_kinds(list(DEFAULTS["stats"].activations))
    seeds = stats_seeds(config)
    cells = [
        Cell((kind.name, seed), _model_spec(config, kind, train_set.shape, seed, num_classes=train_set.num_classes),
             _train_config(config, seed), train_set, test_set)
        for kind in kinds for seed in seeds
    ]
    results = _parallel_map(_run_cell, cells, config.workers)
    by_kind: dict[str, list[RunResult]] = {}
    for c, r in zip(cells, results):
        by_kind.setdefault(c.key[0], []).append(r)
    summaries = {}
    rows = []
    for kind in kinds:
        try:
            s = aggregate_runs(by_kind[kind.name])
        except ValueError:
            # fewer than two runs finished
            summaries[kind.name] = {"n_diverged": sum(r.diverged for r in by_kind[kind.name])}
            rows.append([kind.name, DIVERGED, DIVERGED, DIVERGED])
            continue
        summaries[kind.name] = s.to_dict()
        rows.append([kind.name, repr(s.mean_acc), repr(s.mean_loss), repr(s.std_acc)])
    out = Outputs(config)
    out.csv("stats.csv", STATS_HEADER, rows)
    out.csv("stats_runs.csv", STATS_RUNS_HEADER,
            [[*c.key, _fmt(r.final_test_acc), _fmt(r.final_test_loss)] for c, r in zip(cells, results)])
    return summaries


RUNNERS: dict[str, Callable[[ExperimentConfig], object]] = {
    "gradcheck": run_gradcheck,
    "bench": run_bench,
    "landscape": run_landscape,
    "train": run_train,
    "sweep-depth": run_sweep_depth,
    "sweep-noise": run_sweep_noise,
    "sweep-init": run_sweep_init,
    "stats": run_stats,
}


def run_experiment(config: ExperimentConfig):
    return RUNNERS[config.experiment](config)
