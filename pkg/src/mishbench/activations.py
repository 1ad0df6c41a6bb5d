"""Scalar mathematics for Mish and the activation functions it is compared against.

Every function here works on Python floats and on NumPy arrays. Array inputs keep
their dtype; the kernel layer nonetheless evaluates in double and rounds once.

Conventions:
    * Piecewise-linear kinds (ReLU, LeakyReLU, RReLUFixed, SReLUFixed, ELU, SELU)
      use the right-derivative at their kinks, so ``grad(relu, 0.0) == 1.0``.
    * ``softplus_stable`` returns ``x`` itself for ``x >= 20``; Mish inherits the
      cut-off, so ``mish(x) == x`` and ``mish'(x) == 1`` there.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np
from scipy import special

SOFTPLUS_THRESHOLD = 20.0

SELU_LAMBDA = 1.0507009873554804934193349852946
SELU_ALPHA = 1.6732632423543772848170429916717

# tanh(softplus(0)) = tanh(ln 2) = 3/5 exactly.
MISH_RATIO_AT_ZERO = 0.6

_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tag(str, Enum):
    MISH = "mish"
    SWISH = "swish"
    RELU = "relu"
    LEAKY_RELU = "leaky_relu"
    ELU = "elu"
    SELU = "selu"
    SOFTPLUS = "softplus"
    TANH = "tanh"
    SIGMOID = "sigmoid"
    GELU = "gelu"
    SRELU_FIXED = "srelu"
    ISRU = "isru"
    RRELU_FIXED = "rrelu"
    ARCTAN_SOFTPLUS = "arctan_softplus"
    TANH_SOFTPLUS = "tanh_softplus"
    XLOG_ARCTAN_EXP = "xlog_arctan_exp"
    XLOG_TANH_EXP = "xlog_tanh_exp"


_DEFAULT_ALPHA = {Tag.LEAKY_RELU: 0.01, Tag.ELU: 1.0, Tag.ISRU: 1.0}


@dataclass(frozen=True)
class ActivationKind:
    """An activation function together with its (fixed) hyperparameters.

    Only the fields relevant to ``tag`` are meaningful; the rest keep their
    defaults and are ignored. ``alpha`` is filled from the per-tag default when
    left as ``None``.
    """

    tag: Tag
    beta: float = 1.0
    alpha: float | None = None
    t_left: float = -1.0
    a_left: float = 0.1
    t_right: float = 1.0
    a_right: float = 0.1
    lower: float = 1.0 / 8.0
    upper: float = 1.0 / 3.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "tag", Tag(self.tag))
        if self.alpha is None and self.tag in _DEFAULT_ALPHA:
            object.__setattr__(self, "alpha", _DEFAULT_ALPHA[self.tag])
        if self.tag is Tag.SWISH and not self.beta > 0:
            raise ValueError(f"swish needs beta > 0, got {self.beta}")
        if self.tag in _DEFAULT_ALPHA and not self.alpha > 0:
            raise ValueError(f"{self.tag.value} needs alpha > 0, got {self.alpha}")
        if self.tag is Tag.RRELU_FIXED and not 0 < self.lower <= self.upper < 1:
            raise ValueError(f"rrelu needs 0 < lower <= upper < 1, got {self.lower}, {self.upper}")
        if self.tag is Tag.SRELU_FIXED and not self.t_left < self.t_right:
            raise ValueError("srelu needs t_left < t_right")

    @property
    def name(self) -> str:
        return self.tag.value

    @property
    def rrelu_slope(self) -> float:
        return 0.5 * (self.lower + self.upper)

    @property
    def kinks(self) -> tuple[float, ...]:
        """Points where the first derivative is discontinuous."""
        if self.tag in (Tag.RELU, Tag.LEAKY_RELU, Tag.RRELU_FIXED, Tag.ELU, Tag.SELU):
            return (0.0,)
        if self.tag is Tag.SRELU_FIXED:
            return (self.t_left, self.t_right)
        return ()

    def _relevant_params(self) -> dict[str, float]:
        names = {
            Tag.SWISH: ("beta",),
            Tag.LEAKY_RELU: ("alpha",),
            Tag.ELU: ("alpha",),
            Tag.ISRU: ("alpha",),
            Tag.SRELU_FIXED: ("t_left", "a_left", "t_right", "a_right"),
            Tag.RRELU_FIXED: ("lower", "upper"),
        }.get(self.tag, ())
        default = ActivationKind(self.tag)
        return {n: getattr(self, n) for n in names if getattr(self, n) != getattr(default, n)}

    def __str__(self) -> str:
        """Round-trips through ``parse``; default parameters are omitted."""
        params = self._relevant_params()
        if not params:
            return self.tag.value
        return f"{self.tag.value}(" + ", ".join(f"{k}={v!r}" for k, v in params.items()) + ")"

    @classmethod
    def parse(cls, text: str) -> ActivationKind:
        """Parse ``"name"`` or ``"name(key=value, ...)"``, e.g. ``"swish(beta=1.5)"``."""
        m = re.fullmatch(r"\s*([a-z_]+)\s*(?:\((.*)\))?\s*", text.lower())
        if m is None:
            raise ValueError(f"cannot parse activation {text!r}")
        name, args = m.groups()
        try:
            tag = Tag(name)
        except ValueError:
            known = ", ".join(t.value for t in Tag)
            raise ValueError(f"unknown activation {name!r}; known: {known}") from None
        kwargs = {}
        for item in filter(None, (a.strip() for a in (args or "").split(","))):
            key, _, value = item.partition("=")
            kwargs[key.strip()] = float(value)
        try:
            return cls(tag, **kwargs)
        except TypeError as exc:
            raise ValueError(f"bad parameters for {name!r}: {exc}") from None


MISH = ActivationKind(Tag.MISH)
SWISH = ActivationKind(Tag.SWISH)
RELU = ActivationKind(Tag.RELU)
GELU = ActivationKind(Tag.GELU)
SOFTPLUS = ActivationKind(Tag.SOFTPLUS)
TANH_SOFTPLUS = ActivationKind(Tag.TANH_SOFTPLUS)

ALL_KINDS: tuple[ActivationKind, ...] = tuple(ActivationKind(t) for t in Tag)


# --------------------------------------------------------------------------
# Array primitives. All of them preserve the floating dtype of their input.
# --------------------------------------------------------------------------


def _as_float_array(x):
    x = np.asarray(x)
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(np.float64)
    return x


def _sigmoid(x):
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def _softplus(x):
    # Above the threshold softplus(x) == x to within 2e-9; log1p keeps full
    # relative accuracy for tiny e^x on the negative side.
    e = np.exp(np.minimum(x, SOFTPLUS_THRESHOLD))
    return np.where(x >= SOFTPLUS_THRESHOLD, x, np.log1p(e))


def _sech2_of_positive(y):
    # sech^2(y) for y >= 0 without overflowing cosh. Near 0 the exponential form
    # can round above 1; 1 - tanh^2 cannot.
    e = np.exp(-2.0 * y)
    t = np.tanh(np.minimum(y, 1.0))
    return np.where(y < 1.0, 1.0 - t * t, 4.0 * e / ((1.0 + e) * (1.0 + e)))


def _mish_gate(x):
    """tanh(softplus(x)), which is also Mish(x)/x."""
    return np.tanh(_softplus(x))


def _mish_forward(x):
    return np.where(x >= SOFTPLUS_THRESHOLD, x, x * _mish_gate(x))


def mish_grad_from_gate(x, gate):
    """Mish derivative given ``gate = tanh(softplus(x))``.

    Uses ``f'(x) = sech^2(softplus(x)) * x * sigmoid(x) + f(x)/x`` with
    ``sech^2 = 1 - gate^2`` and ``f(x)/x = gate``. The kernel layer's fused
    backward feeds a cached gate through this same function.
    """
    d = gate + x * (1.0 - gate * gate) * _sigmoid(x)
    return np.where(x >= SOFTPLUS_THRESHOLD, np.ones_like(d), d)


def _with_nan(x, y):
    return np.where(np.isnan(x), x, y)


def forward_array(kind: ActivationKind, x):
    """Forward value of ``kind`` applied elementwise, dtype-preserving."""
    x = _as_float_array(x)
    t = kind.tag
    if t is Tag.MISH:
        return _mish_forward(x)
    if t is Tag.SWISH:
        return x * _sigmoid(kind.beta * x)
    if t is Tag.RELU:
        return np.maximum(x, 0.0)
    if t is Tag.LEAKY_RELU:
        return np.where(x >= 0, x, kind.alpha * x)
    if t is Tag.RRELU_FIXED:
        return np.where(x >= 0, x, kind.rrelu_slope * x)
    if t is Tag.ELU:
        return np.where(x > 0, x, kind.alpha * np.expm1(np.minimum(x, 0.0)))
    if t is Tag.SELU:
        return SELU_LAMBDA * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))
    if t is Tag.SOFTPLUS:
        return _softplus(x)
    if t is Tag.TANH:
        return np.tanh(x)
    if t is Tag.SIGMOID:
        return _sigmoid(x)
    if t is Tag.GELU:
        return x * special.ndtr(x)  # ndtr goes through erfc: no cancellation for x << 0
    if t is Tag.SRELU_FIXED:
        right = kind.t_right + kind.a_right * (x - kind.t_right)
        left = kind.t_left + kind.a_left * (x - kind.t_left)
        return np.where(x >= kind.t_right, right, np.where(x <= kind.t_left, left, x))
    if t is Tag.ISRU:
        return x / np.sqrt(1.0 + kind.alpha * x * x)
    if t is Tag.ARCTAN_SOFTPLUS:
        return np.arctan(x) * _softplus(x)
    if t is Tag.TANH_SOFTPLUS:
        return np.tanh(x) * _softplus(x)
    if t is Tag.XLOG_ARCTAN_EXP:
        e = np.exp(np.minimum(x, 40.0))
        return x * np.log1p(np.arctan(e))
    if t is Tag.XLOG_TANH_EXP:
        e = np.exp(np.minimum(x, 40.0))
        return x * np.log1p(np.tanh(e))
    raise ValueError(f"unsupported activation {kind}")


def grad_array(kind: ActivationKind, x):
    """Closed-form first derivative of ``kind`` applied elementwise."""
    x = _as_float_array(x)
    t = kind.tag
    if t is Tag.MISH:
        return mish_grad_from_gate(x, _mish_gate(x))
    if t is Tag.SWISH:
        s = _sigmoid(kind.beta * x)
        return s + kind.beta * x * s * (1.0 - s)
    if t is Tag.RELU:
        return _with_nan(x, np.where(x >= 0, 1.0, 0.0).astype(x.dtype))
    if t is Tag.LEAKY_RELU:
        return _with_nan(x, np.where(x >= 0, 1.0, kind.alpha).astype(x.dtype))
    if t is Tag.RRELU_FIXED:
        return _with_nan(x, np.where(x >= 0, 1.0, kind.rrelu_slope).astype(x.dtype))
    if t is Tag.ELU:
        return _with_nan(x, np.where(x >= 0, 1.0, kind.alpha * np.exp(np.minimum(x, 0.0))))
    if t is Tag.SELU:
        neg = SELU_LAMBDA * SELU_ALPHA * np.exp(np.minimum(x, 0.0))
        return _with_nan(x, np.where(x >= 0, SELU_LAMBDA, neg))
    if t is Tag.SOFTPLUS:
        return _sigmoid(x)
    if t is Tag.TANH:
        th = np.tanh(x)
        return 1.0 - th * th
    if t is Tag.SIGMOID:
        s = _sigmoid(x)
        return s * (1.0 - s)
    if t is Tag.GELU:
        cdf = special.ndtr(x)
        return cdf + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)
    if t is Tag.SRELU_FIXED:
        g = np.where(x >= kind.t_right, kind.a_right, np.where(x < kind.t_left, kind.a_left, 1.0))
        return _with_nan(x, g.astype(x.dtype))
    if t is Tag.ISRU:
        r = 1.0 / np.sqrt(1.0 + kind.alpha * x * x)
        return r * r * r
    if t is Tag.ARCTAN_SOFTPLUS:
        return _softplus(x) / (1.0 + x * x) + np.arctan(x) * _sigmoid(x)
    if t is Tag.TANH_SOFTPLUS:
        th = np.tanh(x)
        return (1.0 - th * th) * _softplus(x) + th * _sigmoid(x)
    if t is Tag.XLOG_ARCTAN_EXP:
        xc = np.minimum(x, 40.0)
        e = np.exp(xc)
        at = np.arctan(e)
        # e^x / (1 + e^{2x}) == sech(x) / 2
        half_sech = np.exp(-np.abs(xc)) / (1.0 + np.exp(-2.0 * np.abs(xc)))
        return np.log1p(at) + x * half_sech / (1.0 + at)
    if t is Tag.XLOG_TANH_EXP:
        e = np.exp(np.minimum(x, 40.0))
        th = np.tanh(e)
        return np.log1p(th) + x * e * _sech2_of_positive(e) / (1.0 + th)
    raise ValueError(f"unsupported activation {kind}")


def grad2_array(kind: ActivationKind, x):
    x = _as_float_array(x)
    if kind.tag is Tag.MISH:
        gate = _mish_gate(x)
        sech2 = 1.0 - gate * gate
        s = _sigmoid(x)
        d2 = 2.0 * sech2 * s + x * sech2 * s * (1.0 - s) - 2.0 * x * gate * sech2 * s * s
        return np.where(x >= SOFTPLUS_THRESHOLD, np.zeros_like(d2), d2)
    if kind.tag is Tag.SWISH:
        b = kind.beta
        s = _sigmoid(b * x)
        ds = s * (1.0 - s)
        return 2.0 * b * ds + b * b * x * ds * (1.0 - 2.0 * s)
    raise ValueError(f"second derivative is only defined for mish and swish, not {kind}")


# --------------------------------------------------------------------------
# Public scalar API
# --------------------------------------------------------------------------


def _scalar_or_array(value):
    return float(value) if np.ndim(value) == 0 else value


def softplus_stable(x):
    """ln(1 + e^x); returns x itself for x >= 20. NaN in, NaN out."""
    return _scalar_or_array(_softplus(_as_float_array(x)))


def evaluate(kind: ActivationKind, x):
    """Forward value of ``kind`` at ``x`` (float or array)."""
    return _scalar_or_array(forward_array(kind, x))


def grad(kind: ActivationKind, x):
    """First derivative of ``kind`` at ``x``."""
    return _scalar_or_array(grad_array(kind, x))


def grad2(kind: ActivationKind, x):
    """Second derivative; only Mish and Swish are supported."""
    return _scalar_or_array(grad2_array(kind, x))


def mish_grad_rational(x):
    """Mish derivative as ``e^x * omega / delta^2``.

    omega = 4(x+1) + 4e^{2x} + e^{3x} + e^x(4x+6), delta = 2e^x + e^{2x} + 2.
    For x > 0 numerator and denominator are divided by e^{4x} so nothing
    overflows. Kept as an independent cross-check of ``grad(MISH, x)``.
    """
    x = _as_float_array(x)
    xn = np.minimum(x, 0.0)
    e = np.exp(xn)
    omega = 4.0 * (xn + 1.0) + 4.0 * e * e + e * e * e + e * (4.0 * xn + 6.0)
    delta = 2.0 * e + e * e + 2.0
    low = e * omega / (delta * delta)

    xp = np.maximum(x, 0.0)
    u = np.exp(-xp)
    num = 1.0 + 4.0 * u + (4.0 * xp + 6.0) * u * u + 4.0 * (xp + 1.0) * u * u * u
    den = 1.0 + 2.0 * u + 2.0 * u * u
    high = num / (den * den)
    return _scalar_or_array(np.where(x > 0, high, low))


class MishDerivativeParts(NamedTuple):
    delta: float
    swish_val: float
    ratio: float
    total: float


def mish_grad_decomposed(x: float) -> MishDerivativeParts:
    """Split the Mish derivative into ``delta * swish + ratio``.

    ``delta`` is sech^2(softplus(x)), ``swish_val`` is x*sigmoid(x) and
    ``ratio`` is Mish(x)/x, filled with 0.6 at x = 0.
    """
    x = float(x)
    sp = _softplus(np.float64(x))
    # 1 - tanh^2 loses everything once tanh rounds to 1; 4e^{-2s}/(1+e^{-2s})^2 does not.
    delta = float(_sech2_of_positive(sp))
    swish_val = x * float(_sigmoid(np.float64(x)))
    if x == 0.0:
        ratio = MISH_RATIO_AT_ZERO
    else:
        ratio = float(np.tanh(sp))
    return MishDerivativeParts(delta, swish_val, ratio, delta * swish_val + ratio)


def finite_diff(kind: ActivationKind, x, h: float):
    """Central difference (f(x+h) - f(x-h)) / 2h in double precision."""
    if not h > 0:
        raise ValueError(f"step h must be positive, got {h}")
    x = np.asarray(x, dtype=np.float64)
    diff = (forward_array(kind, x + h) - forward_array(kind, x - h)) / (2.0 * h)
    return _scalar_or_array(diff)


def finite_diff2(kind: ActivationKind, x, h: float):
    """Second-order central difference (f(x+h) - 2f(x) + f(x-h)) / h^2."""
    if not h > 0:
        raise ValueError(f"step h must be positive, got {h}")
    x = np.asarray(x, dtype=np.float64)
    f = lambda v: forward_array(kind, v)  # noqa: E731
    return _scalar_or_array((f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h))


_HAS_INTERIOR_MINIMUM = (Tag.MISH, Tag.SWISH, Tag.GELU)


def minimum_of(kind: ActivationKind, tol: float = 1e-14) -> tuple[float, float]:
    """Locate the negative-axis minimum by bisecting the derivative's sign change.

    Returns ``(x_min, f_min)``. Only Mish, Swish and GELU have such a minimum.
    """
    if kind.tag not in _HAS_INTERIOR_MINIMUM:
        raise ValueError(f"{kind} has no interior minimum")
    lo, hi = -10.0, 0.0
    if not (grad(kind, lo) < 0 < grad(kind, hi)):
        raise ValueError(f"derivative of {kind} does not change sign on [{lo}, {hi}]")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if grad(kind, mid) < 0:
            lo = mid
        else:
            hi = mid
    x_min = 0.5 * (lo + hi)
    return x_min, evaluate(kind, x_min)

