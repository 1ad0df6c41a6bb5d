"""Output landscapes of random networks, loss-surface slices and field export."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .activations import ActivationKind
from .nn import build_probe_mlp, init_params
from .nn.layers import Conv2D, Dense
from .nn.network import Network, softmax_cross_entropy


@dataclass(frozen=True)
class GridSpec:
    x_range: tuple[float, float] = (-10.0, 10.0)
    y_range: tuple[float, float] = (-10.0, 10.0)
    resolution: int = 256

    def __post_init__(self) -> None:
        if self.resolution < 2:
            raise ValueError("resolution must be >= 2")
        for lo, hi in (self.x_range, self.y_range):
            if not hi > lo:
                raise ValueError(f"degenerate range ({lo}, {hi})")

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(*self.x_range, self.resolution)

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(*self.y_range, self.resolution)


@dataclass
class Field2D:
    """Scalar values on a grid; ``values[i, j]`` sits at ``(xs[j], ys[i])``."""

    values: np.ndarray
    grid: GridSpec
    diverged: bool = False
    meta: dict = field(default_factory=dict)


def output_landscape(activation: ActivationKind, seed: int, grid: GridSpec = GridSpec(),
                     depth: int = 5, width: int = 64, initializer: str = "glorot_uniform") -> Field2D:
    """Feed every grid coordinate through a seeded random ``depth``-layer net with a scalar output.

    The weight draw depends only on ``seed``, so two activations at the same seed
    see identical weights.
    """
    spec = build_probe_mlp(activation, depth, width, initializer=initializer, seed=seed)
    net = init_params(spec, np.float64)
    return field_from_network(net, grid)


def field_from_network(net: Network, grid: GridSpec) -> Field2D:
    gx, gy = np.meshgrid(grid.xs, grid.ys)
    points = np.stack([gx.ravel(), gy.ravel()], axis=1)
    values = net.predict(points, batch_size=8192)[:, 0].reshape(gx.shape)
    return Field2D(values, grid, diverged=not np.all(np.isfinite(values)))


def _laplacian(v: np.ndarray) -> np.ndarray:
    return v[1:-1, :-2] + v[1:-1, 2:] + v[:-2, 1:-1] + v[2:, 1:-1] - 4.0 * v[1:-1, 1:-1]


def roughness(f: Field2D) -> float:
    """Mean absolute 5-point Laplacian over interior cells divided by the field's std.

    Zero for constant and for linear fields, and unchanged by ``v -> a*v + b``.
    """
    v = np.asarray(f.values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("roughness needs a finite field")
    std = v.std()
    if std == 0 or min(v.shape) < 3:
        return 0.0
    return float(np.abs(_laplacian(v)).mean() / std)


def total_variation(f: Field2D) -> float:
    """Mean absolute first difference along both axes, divided by the field's std."""
    v = np.asarray(f.values, dtype=np.float64)
    std = v.std()
    if std == 0:
        return 0.0
    return float((np.abs(np.diff(v, axis=0)).mean() + np.abs(np.diff(v, axis=1)).mean()) / std)


# --------------------------------------------------------------------------
# Loss slices
# --------------------------------------------------------------------------


def _filter_normalized(theta: np.ndarray, rng: np.random.Generator, max_tries: int) -> np.ndarray:
    """Gaussian direction rescaled so each output unit/filter matches the weight's norm."""
    for _ in range(max_tries):
        d = rng.standard_normal(theta.shape)
        # last axis indexes output units (dense) or filters (conv)
        axes = tuple(range(theta.ndim - 1))
        d_norm = np.sqrt((d * d).sum(axis=axes))
        if np.all(d_norm > 0):
            t_norm = np.sqrt((theta.astype(np.float64) ** 2).sum(axis=axes))
            return d * (t_norm / d_norm)
    raise RuntimeError(f"could not draw a direction without zero-norm filters in {max_tries} tries")


def random_directions(net: Network, seed: int, max_tries: int = 10) -> tuple[list[dict], list[dict]]:
    """Two filter-normalized directions. Biases and batch-norm parameters get zero."""
    rng = np.random.default_rng(seed)
    dirs: tuple[list[dict], list[dict]] = ([], [])
    for layer, p in zip(net.spec.layers, net.params):
        for d in dirs:
            entry = {}
            for name, theta in p.items():
                if isinstance(layer, (Dense, Conv2D)) and name == "W":
                    entry[name] = _filter_normalized(theta, rng, max_tries)
                else:
                    entry[name] = np.zeros(theta.shape)
            d.append(entry)
    return dirs


def perturbed(net: Network, d1: list[dict], d2: list[dict], alpha: float, beta: float) -> Network:
    out = net.copy()
    for p, p0, a, b in zip(out.params, net.params, d1, d2):
        for name in p:
            p[name] = (p0[name] + alpha * a[name] + beta * b[name]).astype(net.dtype)
    return out


def eval_loss(net: Network, x: np.ndarray, y: np.ndarray, batch_size: int = 2048) -> float:
    total = 0.0
    for i in range(0, len(x), batch_size):
        logits, _ = net.forward(x[i:i + batch_size], "eval")
        total += softmax_cross_entropy(logits, y[i:i + batch_size])[0] * len(y[i:i + batch_size])
    return total / len(x)


def slice_with_directions(net: Network, x: np.ndarray, y: np.ndarray, d1: list[dict], d2: list[dict],
                          grid: GridSpec) -> Field2D:
    values = np.empty((grid.resolution, grid.resolution))
    for i, beta in enumerate(grid.ys):
        for j, alpha in enumerate(grid.xs):
            values[i, j] = eval_loss(perturbed(net, d1, d2, alpha, beta), x, y)
    center = eval_loss(perturbed(net, d1, d2, 0.0, 0.0), x, y)
    return Field2D(values, grid, diverged=not np.all(np.isfinite(values)), meta={"center_loss": center})


def loss_slice(net: Network, images: np.ndarray, labels: np.ndarray, seed: int,
               grid: GridSpec = GridSpec((-1.0, 1.0), (-1.0, 1.0), 65),
               n_eval: int = 2048) -> Field2D:
    """Mean eval-mode loss over ``theta + alpha*d1 + beta*d2`` on a seeded evaluation subset."""
    if len(labels) == 0:
        raise ValueError("loss slice needs a non-empty evaluation set")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.permutation(len(labels))[:n_eval])
    x, y = np.asarray(images[idx], dtype=net.dtype), labels[idx]
    d1, d2 = random_directions(net, seed + 1)
    f = slice_with_directions(net, x, y, d1, d2, grid)
    f.meta["base_loss"] = eval_loss(net, x, y)
    f.meta["n_eval"] = int(len(idx))
    return f


# --------------------------------------------------------------------------
# Export
# --------------------------------------------------------------------------


def export_field(f: Field2D, path: str | Path, fmt: str | None = None) -> dict:
    """Write ``f`` as CSV (``x,y,value`` rows, row-major) or binary PGM (P5).

    PGM values are min-max scaled to 0..255 with row 0 at the lowest y. Returns
    ``{"path": ..., "degenerate_scale": bool}``; a constant field is written as all
    zeros and flagged.
    """
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    v = f.values
    degenerate = False
    try:
        if fmt == "csv":
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["x", "y", "value"])
                for i, yv in enumerate(f.grid.ys):
                    for j, xv in enumerate(f.grid.xs):
                        w.writerow([repr(float(xv)), repr(float(yv)), repr(float(v[i, j]))])
        elif fmt == "pgm":
            lo, hi = np.nanmin(v), np.nanmax(v)
            degenerate = not hi > lo
            if degenerate:
                pix = np.zeros(v.shape, dtype=np.uint8)
            else:
                pix = np.rint((np.nan_to_num(v, nan=lo) - lo) / (hi - lo) * 255).astype(np.uint8)
            header = f"P5\n{v.shape[1]} {v.shape[0]}\n255\n".encode()
            path.write_bytes(header + pix.tobytes())
        else:
            raise ValueError(f"unknown field format {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write field to {path}: {exc.strerror or exc}") from exc
    return {"path": str(path), "degenerate_scale": degenerate}


def read_field_csv(path: str | Path) -> Field2D:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["x", "y", "value"]:
        raise ValueError(f"{path}: unexpected header {rows[0]}")
    data = np.array(rows[1:], dtype=np.float64)
    xs, ys = np.unique(data[:, 0]), np.unique(data[:, 1])
    if len(xs) != len(ys):
        raise ValueError(f"{path}: only square grids are supported")
    grid = GridSpec((xs[0], xs[-1]), (ys[0], ys[-1]), len(xs))
    return Field2D(data[:, 2].reshape(len(ys), len(xs)), grid)


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    magic, dims, maxval, rest = raw.split(b"\n", 3)
    if magic != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = map(int, dims.split())
    return np.frombuffer(rest, dtype=np.uint8).reshape(h, w)
