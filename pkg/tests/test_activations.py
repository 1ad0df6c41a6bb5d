import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mishbench import activations as act
from mishbench.activations import ActivationKind, Tag

mp.mp.dps = 40


def mp_mish(x):
    x = mp.mpf(x)
    return x * mp.tanh(mp.log1p(mp.exp(x)))


def mp_swish(x, beta=1):
    x = mp.mpf(x)
    return x / (1 + mp.exp(-beta * x))


# --- softplus ---------------------------------------------------------------


def test_softplus_at_zero_is_ln2():
    assert act.softplus_stable(0.0) == pytest.approx(math.log(2.0), abs=1e-15)


def test_softplus_threshold_returns_input_exactly():
    assert act.softplus_stable(25.0) == 25.0
    assert act.softplus_stable(20.0) == 20.0


def test_softplus_far_negative_no_underflow():
    expected = float(mp.log1p(mp.exp(-40)))
    got = act.softplus_stable(-40.0)
    assert got == pytest.approx(expected, rel=1e-12)
    assert got == pytest.approx(4.248354255291589e-18, rel=1e-12)


# --- forward values -----------------------------------------------------------


@pytest.mark.parametrize("x", [1.0, -1.0, 0.37, -3.5, 7.0])
def test_mish_matches_extended_precision(x):
    assert act.evaluate(act.MISH, x) == pytest.approx(float(mp_mish(x)), rel=1e-14, abs=1e-16)


def test_forward_examples():
    assert act.evaluate(act.MISH, 0.0) == 0.0
    assert act.evaluate(act.MISH, 1.0) == pytest.approx(0.865098, abs=1e-6)
    assert act.evaluate(act.MISH, -1.0) == pytest.approx(-0.303401, abs=1e-6)
    assert act.evaluate(act.SWISH, 1.0) == pytest.approx(0.731059, abs=1e-6)
    assert act.evaluate(act.RELU, -3.0) == 0.0


def test_mish_large_input_is_identity():
    assert act.evaluate(act.MISH, 1000.0) == pytest.approx(1000.0, rel=1e-6)


# --- first derivative -------------------------------------------------------------


def test_grad_examples():
    assert abs(act.grad(act.MISH, 0.0) - 0.6) <= 1e-12
    assert act.grad(act.SWISH, 0.0) == pytest.approx(0.5, abs=1e-15)
    assert abs(act.grad(act.MISH, 30.0) - 1.0) <= 1e-12
    assert act.grad(act.RELU, 0.0) == 1.0


@pytest.mark.parametrize("x", [-8.0, -1.19, -0.3, 0.0, 0.5, 2.0, 9.0])
def test_mish_grad_against_mpmath_derivative(x):
    oracle = float(mp.diff(mp_mish, x))
    assert act.grad(act.MISH, x) == pytest.approx(oracle, rel=1e-12, abs=1e-14)
    assert act.mish_grad_rational(x) == pytest.approx(oracle, rel=1e-12, abs=1e-14)


@pytest.mark.parametrize("beta", [0.5, 1.0, 1.5])
@pytest.mark.parametrize("x", [-4.0, -0.2, 0.0, 3.0])
def test_swish_beta_grad_against_mpmath(beta, x):
    kind = ActivationKind(Tag.SWISH, beta=beta)
    oracle = float(mp.diff(lambda v: mp_swish(v, beta), x))
    assert act.grad(kind, x) == pytest.approx(oracle, rel=1e-12, abs=1e-14)


def test_rational_and_decomposed_agree_on_sweep():
    xs = np.linspace(-20.0, 20.0, 10001)
    decomposed = np.array([act.mish_grad_decomposed(x).total for x in xs])
    assert np.max(np.abs(act.mish_grad_rational(xs) - decomposed)) <= 1e-9


@pytest.mark.parametrize("kind", act.ALL_KINDS, ids=str)
def test_grad_matches_central_difference(kind):
    h = 1e-5
    xs = np.linspace(-6.0, 6.0, 1001)
    for k in kind.kinks:
        xs = xs[np.abs(xs - k) > 2 * h]
    err = np.max(np.abs(act.grad_array(kind, xs) - act.finite_diff(kind, xs, h)))
    assert err <= 1e-6


def test_finite_diff_examples():
    assert act.finite_diff(act.MISH, 0.0, 1e-5) == pytest.approx(0.6, abs=1e-8)
    assert act.finite_diff(act.RELU, 5.0, 1e-5) == pytest.approx(1.0, abs=1e-10)
    # tanh(x)*softplus(x): product rule by hand
    x = 1.0
    sp, t = math.log1p(math.exp(x)), math.tanh(x)
    analytic = (1 - t * t) * sp + t / (1 + math.exp(-x))
    assert act.finite_diff(act.TANH_SOFTPLUS, x, 1e-5) == pytest.approx(analytic, abs=1e-7)
    assert act.grad(act.TANH_SOFTPLUS, x) == pytest.approx(analytic, abs=1e-14)


def test_finite_diff_rejects_bad_step():
    with pytest.raises(ValueError):
        act.finite_diff(act.MISH, 0.0, 0.0)


# --- second derivative ------------------------------------------------------


def test_grad2_examples():
    assert act.grad2(act.MISH, 0.0) == pytest.approx(0.64, abs=1e-14)
    assert act.grad2(act.SWISH, 0.0) == pytest.approx(0.5, abs=1e-14)
    assert abs(act.grad2(act.MISH, 40.0)) <= 1e-10


@pytest.mark.parametrize("kind", [act.MISH, act.SWISH], ids=str)
def test_grad2_matches_second_difference(kind):
    xs = np.linspace(-6.0, 6.0, 1001)
    assert np.max(np.abs(act.grad2(kind, xs) - act.finite_diff2(kind, xs, 1e-4))) <= 1e-4


def test_grad2_against_mpmath():
    for x in (-2.0, -0.5, 1.3):
        oracle = float(mp.diff(mp_mish, x, 2))
        assert act.grad2(act.MISH, x) == pytest.approx(oracle, rel=1e-10)


def test_grad2_rejects_other_kinds():
    with pytest.raises(ValueError):
        act.grad2(act.RELU, 0.0)


# --- decomposition ----------------------------------------------------------


def test_decomposed_at_zero():
    parts = act.mish_grad_decomposed(0.0)
    assert parts.delta == pytest.approx(0.64, abs=1e-15)
    assert parts.swish_val == 0.0
    assert parts.ratio == pytest.approx(0.6, abs=1e-15)
    assert parts.total == pytest.approx(0.6, abs=1e-15)


@pytest.mark.parametrize("x", [-5.0, -1.0, 2.0, 10.0])
def test_decomposed_total_matches_grad(x):
    assert abs(act.mish_grad_decomposed(x).total - act.grad(act.MISH, x)) < 1e-10


def test_delta_vanishes_in_saturation():
    assert act.mish_grad_decomposed(50.0).delta < 1e-20


@settings(max_examples=300, deadline=None)
@given(st.floats(min_value=-30.0, max_value=30.0, allow_nan=False))
def test_decomposition_invariants(x):
    p = act.mish_grad_decomposed(x)
    assert 0.0 < p.delta <= 1.0
    if x > -18.0:  # below this 1 - delta is smaller than half an ulp of 1
        assert p.delta < 1.0
    assert p.total == pytest.approx(p.delta * p.swish_val + p.ratio, rel=1e-12, abs=1e-15)


# --- shape properties ----------------------------------------------------------------


def test_mish_minimum():
    x_min, f_min = act.minimum_of(act.MISH)
    assert -1.1930 <= x_min <= -1.1918
    assert -0.3095 <= f_min <= -0.3080
    # independent oracle: root of the derivative in extended precision
    root = mp.findroot(lambda v: mp.diff(mp_mish, v), -1.19)
    assert x_min == pytest.approx(float(root), abs=1e-10)
    assert f_min == pytest.approx(float(mp_mish(root)), abs=1e-12)


def test_swish_minimum():
    _, f_min = act.minimum_of(act.SWISH)
    assert f_min == pytest.approx(-0.2785, abs=1e-4)


def test_minimum_of_rejects_monotone_kinds():
    with pytest.raises(ValueError):
        act.minimum_of(act.RELU)


def test_mish_bounded_below_and_saturates():
    wide = np.linspace(-100.0, 100.0, 200001)
    assert act.evaluate(act.MISH, wide).min() >= -0.30885 - 1e-6
    big = np.linspace(20.0, 1e4, 10001)
    assert np.max(np.abs(act.evaluate(act.MISH, big) - big)) <= 1e-7
    neg = np.linspace(-1e4, -40.0, 10001)
    assert np.max(np.abs(act.evaluate(act.MISH, neg))) <= 1e-15


def test_mish_non_monotonic_around_minimum():
    x_min, _ = act.minimum_of(act.MISH)
    left = np.linspace(-30.0, x_min - 1e-3, 2000)
    right = np.linspace(x_min + 1e-3, 30.0, 2000)
    g_left = act.grad(act.MISH, left)
    # far left the derivative underflows to -0.0; it must never turn positive
    assert np.all(g_left <= 0) and np.all(g_left[left > -20] < 0)
    assert np.all(act.grad(act.MISH, right) > 0)


@pytest.mark.parametrize("kind", act.ALL_KINDS, ids=str)
def test_single_precision_finite_and_dtype_preserved(kind):
    x = np.linspace(-1e4, 1e4, 20001).astype(np.float32)
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        y = act.forward_array(kind, x)
        g = act.grad_array(kind, x)
    assert y.dtype == np.float32 and g.dtype == np.float32
    assert np.all(np.isfinite(y)) and np.all(np.isfinite(g))


# --- kinds -------------------------------------------------------------------------


def test_relu_family_conventions():
    leaky = ActivationKind.parse("leaky_relu")
    assert act.grad(leaky, 0.0) == 1.0
    assert act.grad(leaky, -1.0) == pytest.approx(0.01)
    rrelu = ActivationKind(Tag.RRELU_FIXED)
    assert rrelu.rrelu_slope == pytest.approx(0.5 * (1 / 8 + 1 / 3))
    assert act.evaluate(rrelu, -2.0) == pytest.approx(-2.0 * rrelu.rrelu_slope)


def test_srelu_pieces():
    s = ActivationKind(Tag.SRELU_FIXED)
    assert act.evaluate(s, 0.5) == 0.5
    assert act.evaluate(s, 3.0) == pytest.approx(1.0 + 0.1 * 2.0)
    assert act.evaluate(s, -3.0) == pytest.approx(-1.0 + 0.1 * -2.0)


def test_gelu_uses_erf():
    x = 0.7
    assert act.evaluate(act.GELU, x) == pytest.approx(float(0.5 * x * (1 + mp.erf(x / mp.sqrt(2)))), rel=1e-14)


@pytest.mark.parametrize("kind", act.ALL_KINDS, ids=str)
def test_kind_string_round_trip(kind):
    assert ActivationKind.parse(str(kind)) == kind


def test_parse_with_parameters():
    k = ActivationKind.parse("swish(beta=1.5)")
    assert k.beta == 1.5 and str(k) == "swish(beta=1.5)"


@pytest.mark.parametrize("bad", [
    dict(tag=Tag.SWISH, beta=0.0),
    dict(tag=Tag.LEAKY_RELU, alpha=-1.0),
    dict(tag=Tag.RRELU_FIXED, lower=0.5, upper=0.2),
    dict(tag=Tag.SRELU_FIXED, t_left=1.0, t_right=-1.0),
])
def test_invalid_parameters_rejected(bad):
    with pytest.raises(ValueError):
        ActivationKind(**bad)


def test_unknown_name_rejected():
    with pytest.raises(ValueError, match="unknown activation"):
        ActivationKind.parse("sinusoid")


def test_catalogue_covers_every_tag():
    assert {k.tag for k in act.ALL_KINDS} == set(Tag)
