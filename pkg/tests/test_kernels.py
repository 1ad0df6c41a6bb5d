import csv
import io
import itertools

import numpy as np
import pytest

from mishbench import activations as act
from mishbench import kernels as K

DT = {"single": np.float32, "double": np.float64}


def ulp_error(got, ref64):
    """Distance in float32 ulps between ``got`` and ``ref64`` rounded to single."""
    ref = ref64.astype(np.float32)
    spacing = np.maximum(np.spacing(np.abs(ref)), np.finfo(np.float32).smallest_subnormal)
    return np.abs(got.astype(np.float64) - ref.astype(np.float64)) / spacing


def forward(kind, x, variant="naive", workers=1):
    out = np.empty_like(x)
    cache = K.apply_forward(kind, x, out, variant, workers)
    return out, cache


def backward(kind, cache, upstream, workers=1):
    g = np.empty_like(upstream)
    K.apply_backward(kind, cache, upstream, g, workers)
    return g


# --- fidelity ------------------------------------------------------------------


def test_forward_examples():
    out, _ = forward(act.MISH, np.array([0.0, 1.0, -1.0]))
    np.testing.assert_allclose(out, [0.0, 0.865098, -0.303401], atol=1e-6)
    out, _ = forward(act.RELU, np.array([-2.0, 0.0, 3.0]))
    np.testing.assert_array_equal(out, [0.0, 0.0, 3.0])


def test_backward_examples():
    _, cache = forward(act.MISH, np.array([0.0]))
    np.testing.assert_allclose(backward(act.MISH, cache, np.ones(1)), [0.6], atol=1e-15)
    x = np.random.default_rng(0).normal(size=64)
    for kind in act.ALL_KINDS:
        _, cache = forward(kind, x)
        assert np.all(backward(kind, cache, np.zeros_like(x)) == 0.0)


@pytest.mark.parametrize("n", [1, 7, 1024, 10**6])
@pytest.mark.parametrize("kind", [act.MISH, act.SWISH, act.RELU, act.GELU, act.SOFTPLUS, act.TANH_SOFTPLUS], ids=str)
def test_double_kernels_equal_scalar_path(kind, n):
    rng = np.random.default_rng(n)
    x = rng.uniform(-30.0, 30.0, n)
    out, cache = forward(kind, x)
    assert np.array_equal(out, act.forward_array(kind, x))
    up = np.ones(n)
    assert np.array_equal(backward(kind, cache, up), act.grad_array(kind, x))
    if n <= 1024:  # scalar-by-scalar cross-check
        assert all(out[i] == act.evaluate(kind, float(x[i])) for i in range(n))


@pytest.mark.parametrize("n", [1, 7, 1024, 10**6])
@pytest.mark.parametrize("kind", act.ALL_KINDS, ids=str)
def test_single_kernels_within_two_ulp(kind, n):
    rng = np.random.default_rng(n + 1)
    x32 = rng.uniform(-30.0, 30.0, n).astype(np.float32)
    x64 = x32.astype(np.float64)
    out, cache = forward(kind, x32)
    assert out.dtype == np.float32
    assert ulp_error(out, act.forward_array(kind, x64)).max() <= 2
    g = backward(kind, cache, np.ones(n, dtype=np.float32))
    assert ulp_error(g, act.grad_array(kind, x64)).max() <= 2


@pytest.mark.parametrize("precision,tol", [("single", 1e-6), ("double", 1e-12)])
def test_fused_matches_naive_backward(precision, tol):
    rng = np.random.default_rng(7)
    x = rng.uniform(-20.0, 20.0, 10**5).astype(DT[precision])
    up = rng.standard_normal(10**5).astype(DT[precision])
    _, c_naive = forward(act.MISH, x, "naive")
    out_f, c_fused = forward(act.MISH, x, "fused")
    assert c_fused.saved_gate is not None and c_naive.saved_gate is None
    np.testing.assert_array_equal(out_f, forward(act.MISH, x, "naive")[0])
    diff = np.abs(backward(act.MISH, c_naive, up).astype(np.float64) - backward(act.MISH, c_fused, up))
    assert diff.max() <= tol


def test_fused_gate_is_tanh_softplus():
    x = np.linspace(-25, 25, 501)
    _, cache = forward(act.MISH, x, "fused")
    np.testing.assert_allclose(cache.saved_gate, np.tanh(np.log1p(np.exp(x))), rtol=1e-14, atol=1e-300)


def test_fused_on_other_kinds_is_plain():
    x = np.linspace(-3, 3, 11)
    out, cache = forward(act.RELU, x, "fused")
    assert cache.saved_gate is None
    np.testing.assert_array_equal(backward(act.RELU, cache, np.ones_like(x)), act.grad_array(act.RELU, x))


@pytest.mark.parametrize("workers", [2, 3, 8])
@pytest.mark.parametrize("variant", ["naive", "fused"])
def test_results_independent_of_worker_count(workers, variant):
    x = np.random.default_rng(3).uniform(-8, 8, 200_003).astype(np.float32)
    up = np.random.default_rng(4).standard_normal(x.size).astype(np.float32)
    out1, c1 = forward(act.MISH, x, variant, 1)
    outn, cn = forward(act.MISH, x, variant, workers)
    assert np.array_equal(out1, outn)
    assert np.array_equal(backward(act.MISH, c1, up, 1), backward(act.MISH, cn, up, workers))


def test_single_precision_wide_range_finite():
    x = np.linspace(-1e4, 1e4, 100_001).astype(np.float32)
    for kind in act.ALL_KINDS:
        out, cache = forward(kind, x)
        g = backward(kind, cache, np.ones_like(x))
        assert np.all(np.isfinite(out)) and np.all(np.isfinite(g)), kind


# --- buffer validation --------------------------------------------------------------


def test_rejects_bad_buffers():
    x = np.zeros(8)
    with pytest.raises(ValueError, match="length"):
        K.apply_forward(act.MISH, x, np.zeros(7))
    with pytest.raises(ValueError, match="precision"):
        K.apply_forward(act.MISH, x, np.zeros(8, dtype=np.float32))
    with pytest.raises(ValueError, match="non-empty"):
        K.apply_forward(act.MISH, np.zeros(0), np.zeros(0))
    with pytest.raises(ValueError, match="contiguous"):
        K.apply_forward(act.MISH, np.zeros(16)[::2], np.zeros(8))
    with pytest.raises(TypeError):
        K.apply_forward(act.MISH, np.zeros(8, dtype=np.int64), np.zeros(8, dtype=np.int64))


def test_fused_backward_without_gate_fails():
    x = np.ones(4)
    cache = K.ActivationCache(saved_input=x, saved_gate=None, variant="fused")
    with pytest.raises(K.KernelStateError):
        K.apply_backward(act.MISH, cache, x, np.empty_like(x))


def test_cache_keeps_its_own_copy_of_input():
    x = np.array([1.0, -1.0])
    _, cache = forward(act.MISH, x)
    x[:] = 0.0
    assert backward(act.MISH, cache, np.ones(2))[0] != 0.6


# --- outlier rule and stats ---------------------------------------------------------------


def test_iqr_examples():
    mean, std, kept = K.summarize_samples([5.0] * 50)
    assert (mean, std, kept) == (5.0, 0.0, 50)
    mean, std, kept = K.summarize_samples([1.0] * 10 + [100.0])
    assert kept == 10 and mean == 1.0 and std == 0.0


def test_iqr_bounds_by_hand():
    s = np.arange(1.0, 13.0).tolist() + [40.0]
    q1, q3 = np.percentile(s, [25, 75])  # 4.0, 10.0
    assert (q1, q3) == (4.0, 10.0)
    kept = K.iqr_filter(s)
    assert 40.0 not in kept and len(kept) == 12  # upper fence 19


def test_std_is_unbiased():
    _, std, _ = K.summarize_samples([1.0, 2.0, 3.0, 4.0])
    assert std == pytest.approx(np.std([1, 2, 3, 4], ddof=1))


def fake_clock(samples):
    """A clock whose consecutive read pairs differ by the given durations."""
    ticks = itertools.chain.from_iterable((0, int(s)) for s in samples)
    return lambda: next(ticks)


def test_benchmark_with_injected_constant_clock():
    r = K.benchmark_op(act.RELU, buffer_len=16, n_total=20, warmup=2, clock=fake_clock([5] * 20))
    assert (r.mean_ns, r.std_ns, r.n_kept, r.n_total, r.warmup) == (5.0, 0.0, 20, 20, 2)


def test_benchmark_with_injected_outlier():
    r = K.benchmark_op(act.RELU, buffer_len=16, n_total=11, warmup=0, clock=fake_clock([1] * 10 + [100]))
    assert r.n_kept == 10 and r.mean_ns == 1.0


def test_benchmark_argument_checks():
    with pytest.raises(ValueError):
        K.benchmark_op(act.RELU, buffer_len=0)
    with pytest.raises(ValueError):
        K.benchmark_op(act.RELU, buffer_len=8, n_total=5)


def test_benchmark_fields_deterministic():
    a = K.benchmark_op(act.MISH, "fused", "backward", "double", buffer_len=64, n_total=10, warmup=1, seed=3)
    b = K.benchmark_op(act.MISH, "fused", "backward", "double", buffer_len=64, n_total=10, warmup=1, seed=3)
    for f in ("kind", "variant", "pass_", "precision", "buffer_len", "n_total", "warmup", "workers"):
        assert getattr(a, f) == getattr(b, f)
    assert a.mean_ns > 0 and a.n_kept <= a.n_total


# --- profile -------------------------------------------------------------------------


def test_profile_shape_and_csv():
    reports = K.speed_profile(buffer_len=256, n_total=10, warmup=1)
    assert len(reports) == 16
    cells = {(r.kind, r.variant, r.pass_, r.precision) for r in reports}
    assert len(cells) == 16
    text = K.profile_csv(reports)
    assert text.endswith("\r\n")
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["kind", "variant", "pass", "precision", "buffer_len", "n_total", "n_kept",
                       "mean_ns", "std_ns", "workers"]
    assert len(rows) == 17
    assert all(row[4] == "256" and row[9] == "1" for row in rows[1:])
    assert K.find_report(reports, "mish", "fused", "backward", "single").buffer_len == 256
    with pytest.raises(KeyError):
        K.find_report(reports, "gelu", "naive", "forward", "single")


@pytest.mark.slow
def test_orderings_at_default_buffer():
    get = lambda r: r.mean_ns  # noqa: E731
    common = dict(buffer_len=K.DEFAULT_BUFFER_LEN, n_total=30, warmup=3)
    relu = K.benchmark_op(act.RELU, "naive", "forward", "single", **common)
    mish = K.benchmark_op(act.MISH, "naive", "forward", "single", **common)
    softplus = K.benchmark_op(act.SOFTPLUS, "naive", "forward", "single", **common)
    assert get(relu) < get(mish)
    assert get(softplus) < get(mish)
