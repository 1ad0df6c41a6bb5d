"""Elementwise forward/backward kernels over 1-D buffers and a microbenchmark harness.

A buffer is a contiguous 1-D ``float32`` or ``float64`` NumPy array. Kernels write
into caller-provided output buffers. The ``fused`` Mish variant caches
``tanh(softplus(x))`` during the forward pass so the backward pass needs one
``exp`` instead of recomputing softplus and tanh.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Literal, Sequence

import numpy as np

from .activations import (
    MISH,
    RELU,
    SOFTPLUS,
    SOFTPLUS_THRESHOLD,
    ActivationKind,
    Tag,
    _mish_gate,
    forward_array,
    grad_array,
    mish_grad_from_gate,
)

log = logging.getLogger(__name__)

Variant = Literal["naive", "fused"]
Pass = Literal["forward", "backward"]
Precision = Literal["single", "double"]

DTYPES = {"single": np.float32, "double": np.float64}
DEFAULT_BUFFER_LEN = 2**20
BLOCK_LEN = 2**16

CSV_HEADER = (
    "kind", "variant", "pass", "precision", "buffer_len",
    "n_total", "n_kept", "mean_ns", "std_ns", "workers",
)


class KernelStateError(RuntimeError):
    """A cache does not carry what the requested backward variant needs."""


@dataclass
class ActivationCache:
    """Forward-pass state. ``saved_gate`` holds ``tanh(softplus(x))`` for the fused
    Mish variant, always in double precision: rounding it to single would put
    ``1 - gate**2`` (tiny for x > 3) several output ulps off."""

    saved_input: np.ndarray
    saved_gate: np.ndarray | None = None
    variant: Variant = "naive"


def precision_of(buf: np.ndarray) -> Precision:
    if buf.dtype == np.float32:
        return "single"
    if buf.dtype == np.float64:
        return "double"
    raise TypeError(f"buffers must be float32 or float64, got {buf.dtype}")


def _check_buffers(*bufs: np.ndarray) -> None:
    first = bufs[0]
    precision_of(first)
    for b in bufs:
        if b.ndim != 1 or not b.flags.c_contiguous:
            raise ValueError("buffers must be contiguous 1-D arrays")
        if b.shape != first.shape:
            raise ValueError(f"buffer length mismatch: {b.shape[0]} vs {first.shape[0]}")
        if b.dtype != first.dtype:
            raise ValueError(f"buffer precision mismatch: {b.dtype} vs {first.dtype}")
    if first.shape[0] == 0:
        raise ValueError("buffers must be non-empty")


def _wide(x: np.ndarray) -> np.ndarray:
    # Single-precision buffers are evaluated in double and rounded once on store,
    # so results sit within half an ulp of the double-precision scalar path.
    return x.astype(np.float64, copy=False)


def _chunks(n: int, workers: int) -> list[slice]:
    workers = max(1, min(workers, n))
    bounds = np.linspace(0, n, workers + 1).astype(int)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]


def _blocked(fn: Callable[[slice], None]) -> Callable[[slice], None]:
    # Walking a worker's range in cache-sized blocks keeps NumPy's temporaries
    # small and reused; whole-buffer temporaries cost more in page faults than
    # the transcendentals themselves.
    def run(part: slice) -> None:
        for start in range(part.start, part.stop, BLOCK_LEN):
            fn(slice(start, min(start + BLOCK_LEN, part.stop)))
    return run


def _run_partitioned(fn: Callable[[slice], None], n: int, workers: int) -> None:
    parts = _chunks(n, workers)
    run = _blocked(fn)
    if len(parts) == 1:
        run(parts[0])
        return
    with ThreadPoolExecutor(max_workers=len(parts)) as pool:
        list(pool.map(run, parts))


def _fused_mish_grad(x: np.ndarray, gate: np.ndarray) -> np.ndarray:
    """``mish_grad_from_gate`` with in-place arithmetic: one exp, no full-size branches."""
    z = np.abs(x)
    np.negative(z, out=z)
    np.exp(z, out=z)  # e^{-|x|}
    sig = z + 1.0
    np.reciprocal(sig, out=sig)  # sigmoid(|x|)
    np.multiply(sig, z, out=sig, where=x < 0)  # sigmoid(x) = e^{-|x|} sigmoid(|x|) for x < 0
    d = np.multiply(gate, gate, out=z)
    np.subtract(1.0, d, out=d)
    d *= x
    d *= sig
    d += gate
    np.copyto(d, 1.0, where=x >= SOFTPLUS_THRESHOLD)
    return d


def apply_forward(
    kind: ActivationKind,
    inp: np.ndarray,
    out: np.ndarray,
    variant: Variant = "naive",
    workers: int = 1,
) -> ActivationCache:
    """Write ``f(inp[i])`` into ``out`` and return the cache for the backward pass."""
    _check_buffers(inp, out)
    fused = variant == "fused" and kind.tag is Tag.MISH
    gate = np.empty(inp.shape, dtype=np.float64) if fused else None

    def work(s: slice) -> None:
        x = _wide(inp[s])
        if fused:
            g = _mish_gate(x)
            gate[s] = g
            out[s] = np.where(x >= SOFTPLUS_THRESHOLD, x, x * g)
        else:
            out[s] = forward_array(kind, x)

    _run_partitioned(work, inp.shape[0], workers)
    return ActivationCache(saved_input=inp.copy(), saved_gate=gate, variant=variant)


def apply_backward(
    kind: ActivationKind,
    cache: ActivationCache,
    upstream: np.ndarray,
    grad_out: np.ndarray,
    workers: int = 1,
) -> None:
    """Write ``upstream[i] * f'(x[i])`` into ``grad_out``."""
    x_all = cache.saved_input
    _check_buffers(x_all, upstream, grad_out)
    fused = cache.variant == "fused" and kind.tag is Tag.MISH
    if fused and cache.saved_gate is None:
        raise KernelStateError("fused backward needs the gate saved by a fused forward pass")
    if fused and cache.saved_gate.shape != x_all.shape:
        raise KernelStateError("saved gate does not match the saved input")

    def work(s: slice) -> None:
        x = _wide(x_all[s])
        if fused:
            d = _fused_mish_grad(x, cache.saved_gate[s])
        else:
            d = grad_array(kind, x)
        np.multiply(upstream[s], d, out=grad_out[s], casting="same_kind")

    _run_partitioned(work, x_all.shape[0], workers)


# --------------------------------------------------------------------------
# Benchmarking
# --------------------------------------------------------------------------


@dataclass
class BenchReport:
    kind: str
    variant: Variant
    pass_: Pass
    precision: Precision
    buffer_len: int
    n_total: int
    n_kept: int
    warmup: int
    mean_ns: float
    std_ns: float
    workers: int = 1
    timer_warning: bool = False

    def csv_row(self) -> list:
        return [
            self.kind, self.variant, self.pass_, self.precision, self.buffer_len,
            self.n_total, self.n_kept, f"{self.mean_ns:.1f}", f"{self.std_ns:.1f}", self.workers,
        ]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("pass_")
        return d


def iqr_filter(samples: Sequence[float]) -> np.ndarray:
    """Keep samples inside [Q1 - 1.5 IQR, Q3 + 1.5 IQR]."""
    s = np.asarray(samples, dtype=np.float64)
    q1, q3 = np.percentile(s, [25, 75])
    iqr = q3 - q1
    return s[(s >= q1 - 1.5 * iqr) & (s <= q3 + 1.5 * iqr)]


def summarize_samples(samples: Sequence[float]) -> tuple[float, float, int]:
    """Mean, sample standard deviation and count of the samples surviving the IQR rule."""
    kept = iqr_filter(samples)
    std = float(np.std(kept, ddof=1)) if kept.size > 1 else 0.0
    return float(np.mean(kept)), std, int(kept.size)


def _timer_resolution_ns() -> float:
    return time.get_clock_info("perf_counter").resolution * 1e9


def benchmark_op(
    kind: ActivationKind,
    variant: Variant = "naive",
    pass_: Pass = "forward",
    precision: Precision = "single",
    buffer_len: int = DEFAULT_BUFFER_LEN,
    n_total: int = 100,
    warmup: int = 10,
    *,
    seed: int = 0,
    workers: int = 1,
    clock: Callable[[], int] = time.perf_counter_ns,
) -> BenchReport:
    """Time one kernel over a seeded random buffer.

    ``warmup`` untimed passes precede ``n_total`` timed ones. One timed sample is
    one full pass over the buffer. ``clock`` can be swapped for a fake in tests.
    """
    if buffer_len < 1:
        raise ValueError("buffer_len must be >= 1")
    if n_total < 10:
        raise ValueError("n_total must be >= 10")
    dtype = DTYPES[precision]
    rng = np.random.default_rng(seed)
    x = rng.uniform(-6.0, 6.0, size=buffer_len).astype(dtype)
    out = np.empty_like(x)
    sink = 0.0

    if pass_ == "forward":
        def step() -> None:
            apply_forward(kind, x, out, variant, workers)
    else:
        cache = apply_forward(kind, x, np.empty_like(x), variant, workers)
        upstream = rng.standard_normal(buffer_len).astype(dtype)

        def step() -> None:
            apply_backward(kind, cache, upstream, out, workers)

    for _ in range(warmup):
        step()
    samples = np.empty(n_total)
    for i in range(n_total):
        t0 = clock()
        step()
        samples[i] = clock() - t0
        sink += float(out[i % buffer_len])
    log.debug("benchmark sink %s", sink)

    mean, std, kept = summarize_samples(samples)
    return BenchReport(
        kind=kind.name, variant=variant, pass_=pass_, precision=precision,
        buffer_len=buffer_len, n_total=n_total, n_kept=kept, warmup=warmup,
        mean_ns=mean, std_ns=std, workers=workers,
        timer_warning=_timer_resolution_ns() > 0.01 * mean,
    )


PROFILE_CELLS: tuple[tuple[ActivationKind, Variant], ...] = (
    (RELU, "naive"),
    (SOFTPLUS, "naive"),
    (MISH, "naive"),
    (MISH, "fused"),
)


def speed_profile(
    buffer_len: int = DEFAULT_BUFFER_LEN,
    n_total: int = 100,
    warmup: int = 10,
    *,
    seed: int = 0,
    workers: int = 1,
) -> list[BenchReport]:
    """ReLU, SoftPlus, Mish-naive and Mish-fused x forward/backward x single/double."""
    reports = []
    for kind, variant in PROFILE_CELLS:
        for pass_ in ("forward", "backward"):
            for precision in ("single", "double"):
                reports.append(
                    benchmark_op(kind, variant, pass_, precision, buffer_len, n_total, warmup,
                                 seed=seed, workers=workers)
                )
    return reports


def profile_csv(reports: Iterable[BenchReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(CSV_HEADER)
    for r in reports:
        writer.writerow(r.csv_row())
    return buf.getvalue()


def find_report(reports: Iterable[BenchReport], kind: str, variant: str, pass_: str, precision: str) -> BenchReport:
    for r in reports:
        if (r.kind, r.variant, r.pass_, r.precision) == (kind, variant, pass_, precision):
            return r
    raise KeyError((kind, variant, pass_, precision))
