"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

The training criteria (10, 11, 13) run on scikit-learn's 8x8 digits, exported to
IDX files so the same loader path as real MNIST is exercised. Expect roughly a
quarter of an hour on one core.
"""

import time

import mpmath as mp
import numpy as np
import pytest

from mishbench import activations as act
from mishbench import experiments as ex
from mishbench import kernels as K
from mishbench.config import parse_config
from mishbench.data import export_digits_idx, load_mnist_dir
from mishbench.landscape import GridSpec, loss_slice, output_landscape, roughness
from mishbench.nn import Adam, TrainConfig, build_mlp, train

mp.mp.dps = 40


@pytest.fixture
def report(capsys):
    def _report(n: int, title: str, ok: bool, detail: str = "") -> None:
        with capsys.disabled():
            print(f"\n[criterion {n:2d}] {'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else ""))
        assert ok, f"criterion {n} failed: {detail}"
    return _report


@pytest.fixture(scope="session")
def digits_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("digits-idx")
    export_digits_idx(d)
    return str(d)


def mean_by(rows, key_cols, value_col):
    groups: dict = {}
    for r in rows:
        groups.setdefault(tuple(r[c] for c in key_cols), []).append(float(r[value_col]))
    return {k: float(np.mean(v)) for k, v in groups.items()}


# --- exact / analytic -------------------------------------------------------------------


def test_c01_mish_grad_at_zero(report):
    err = abs(act.grad(act.MISH, 0.0) - 0.6)
    report(1, "grad(mish, 0) = 0.6 within 1e-12", err <= 1e-12, f"error {err:.2e}")


def test_c02_derivative_identity_sweep(report):
    xs = np.linspace(-20.0, 20.0, 10001)
    decomposed = np.array([act.mish_grad_decomposed(x).total for x in xs])
    err = float(np.max(np.abs(act.mish_grad_rational(xs) - decomposed)))
    report(2, "closed form vs decomposed derivative <= 1e-9 on 10,001 points", err <= 1e-9, f"max {err:.2e}")


def test_c03_finite_difference_all_kinds(report):
    h = 1e-5
    grid = np.linspace(-6.0, 6.0, 1001)
    worst = {}
    for kind in act.ALL_KINDS:
        x = grid[ex._kink_mask(kind, grid, 2 * h)]
        worst[kind.name] = float(np.max(np.abs(act.grad_array(kind, x) - act.finite_diff(kind, x, h))))
    name, err = max(worst.items(), key=lambda kv: kv[1])
    report(3, f"finite differences, {len(worst)} kinds, <= 1e-6", err <= 1e-6 and len(worst) >= 16,
           f"worst {name} {err:.2e}")


def test_c04_mish_minimum(report):
    x_min, f_min = act.minimum_of(act.MISH)
    dmish = lambda v: mp.diff(lambda t: t * mp.tanh(mp.log1p(mp.exp(t))), v)  # noqa: E731
    root = float(mp.findroot(dmish, (-1.5, -1.0), solver="bisect"))
    ok = -0.3095 <= f_min <= -0.3080 and -1.1930 <= x_min <= -1.1918 and abs(x_min - root) <= 1e-8
    report(4, "mish minimum in range and at the derivative root", ok,
           f"x_min {x_min:.7f}, f_min {f_min:.7f}, bisection root {root:.7f}")


def test_c05_stability(report):
    rel = abs(act.evaluate(act.MISH, 1000.0) - 1000.0) / 1000.0
    x = np.linspace(-1e4, 1e4, 200001).astype(np.float32)
    bad = sum(int(np.sum(~np.isfinite(f(k, x)))) for k in act.ALL_KINDS for f in (act.forward_array, act.grad_array))
    threshold = all(act.softplus_stable(v) == v for v in (20.0, 20.5, 100.0, 1e10))
    ok = rel <= 1e-6 and bad == 0 and threshold
    report(5, "large inputs, single-precision finiteness, softplus threshold", ok,
           f"rel {rel:.1e}, non-finite {bad}, threshold {threshold}")


def test_c06_network_gradcheck(report):
    kinds = (act.MISH, act.SWISH, act.GELU, act.TANH_SOFTPLUS)
    checks = ex.network_checks(kinds)
    worst = max(checks, key=lambda c: c.max_error)
    report(6, "whole-network gradient check <= 1e-5 for mish, swish, gelu, tanh_softplus",
           all(c.passed for c in checks), f"worst {worst.kind} {worst.max_error:.2e}")


def test_c07_fused_matches_naive(report):
    rng = np.random.default_rng(7)
    errs = {}
    for precision, dt in (("single", np.float32), ("double", np.float64)):
        x = rng.uniform(-20.0, 20.0, 10**5).astype(dt)
        up = rng.standard_normal(10**5).astype(dt)
        grads = []
        for variant in ("naive", "fused"):
            out = np.empty_like(x)
            cache = K.apply_forward(act.MISH, x, out, variant)
            g = np.empty_like(x)
            K.apply_backward(act.MISH, cache, up, g)
            grads.append(g.astype(np.float64))
        errs[precision] = float(np.max(np.abs(grads[0] - grads[1])))
    ok = errs["single"] <= 1e-6 and errs["double"] <= 1e-12
    report(7, "fused vs naive backward, 1e5 inputs", ok,
           f"single {errs['single']:.2e}, double {errs['double']:.2e}")


def test_c08_loss_slice_center(report, digits_dir):
    tr, te = load_mnist_dir(digits_dir, "train"), load_mnist_dir(digits_dir, "test")
    spec = build_mlp(2, 32, act.MISH, input_shape=tr.shape, dropout=0.0, seed=0)
    r = train(spec, TrainConfig(Adam(1e-3), 64, 3, 0, "float64"), tr.images, tr.labels, te.images, te.labels)
    f = loss_slice(r.network, te.images, te.labels, 0, GridSpec((-1, 1), (-1, 1), 5))
    err = abs(f.meta["center_loss"] - f.meta["base_loss"])
    report(8, "loss slice at (0, 0) equals the base loss within 1e-9", err <= 1e-9, f"diff {err:.1e}")


# --- performance orderings ------------------------------------------------------------------


def test_c09_speed_profile(report):
    t0 = time.perf_counter()
    reports = K.speed_profile()  # buffer 2^20, 100 samples, 10 warmup
    elapsed = time.perf_counter() - t0
    o = ex.bench_orderings(reports, "single")
    ok = o["relu_fwd_lt_mish_fwd"] and o["fused_bwd_le_0.8_naive"] and elapsed < 120
    report(9, "relu fwd < mish fwd, fused bwd <= 0.8 naive bwd, profile < 2 min", ok,
           f"fused/naive {o['fused_bwd_ratio']:.3f}, profile {elapsed:.0f}s")


# --- directional desk-scale reproductions ---------------------------------------------------------


def test_c10_depth_sweep(report, digits_dir, tmp_path):
    cfg = parse_config({"experiment": "sweep-depth", "seeds": [0, 1, 2], "depths": [5, 10, 20],
                        "data": {"kind": "idx", "dir": digits_dir}}, output_dir=str(tmp_path))
    t0 = time.process_time()
    rows = ex.run_experiment(cfg)
    cpu = time.process_time() - t0
    acc = mean_by(rows, (0, 1), 3)
    deep_ok = acc[(20, "mish")] >= acc[(20, "relu")]
    spreads = {d: max(acc[(d, k)] for k in ("mish", "swish", "relu")) - min(acc[(d, k)] for k in ("mish", "swish", "relu"))
               for d in (5, 10)}
    ok = deep_ok and all(s <= 0.015 for s in spreads.values()) and cpu <= 40 * 60
    report(10, "depth 20: mish >= relu; depth <= 10 within 1.5 points; <= 40 min", ok,
           f"d20 mish {acc[(20, 'mish')]:.4f} relu {acc[(20, 'relu')]:.4f}, "
           f"spread d5 {spreads[5]:.4f} d10 {spreads[10]:.4f}, cpu {cpu / 60:.1f} min")


def test_c11_noise_sweep(report, digits_dir, tmp_path):
    cfg = parse_config({"experiment": "sweep-noise", "seeds": [0, 1, 2], "sigmas": [0.0, 0.5, 1.0],
                        "data": {"kind": "idx", "dir": digits_dir}}, output_dir=str(tmp_path))
    rows = ex.run_experiment(cfg)
    loss = mean_by(rows, (0, 1), 3)
    ok = all(loss[(s, "mish")] <= loss[(s, "relu")] for s in ("0.5", "1.0"))
    report(11, "sigma 0.5 and 1.0: mean test loss mish <= relu", ok,
           ", ".join(f"s={s} mish {loss[(s, 'mish')]:.3f} relu {loss[(s, 'relu')]:.3f}" for s in ("0.5", "1.0")))


def test_c12_landscape_roughness(report):
    t0 = time.perf_counter()
    wins = 0
    for seed in range(10):
        wins += roughness(output_landscape(act.RELU, seed)) > roughness(output_landscape(act.MISH, seed))
    elapsed = time.perf_counter() - t0
    report(12, "relu rougher than mish in >= 9 of 10 seeds, < 1 min", wins >= 9 and elapsed < 60,
           f"{wins}/10 in {elapsed:.1f}s")


def test_c13_stats(report, digits_dir, tmp_path):
    cfg = parse_config({"experiment": "stats", "seeds": [0], "n_runs": 5, "activations": ["mish", "relu"],
                        "data": {"kind": "idx", "dir": digits_dir}}, output_dir=str(tmp_path))
    summary = ex.run_experiment(cfg)
    header = (tmp_path / "stats.csv").read_text().splitlines()[0]
    mish, relu = summary["mish"]["mean_acc"], summary["relu"]["mean_acc"]
    ok = mish >= relu and header == "activation,mu_acc,mu_loss,sigma_acc" and summary["mish"]["n_runs"] == 5
    report(13, "5 runs: mean acc mish >= relu; columns activation, mu_acc, mu_loss, sigma_acc", ok,
           f"mish {mish:.4f}, relu {relu:.4f}")
