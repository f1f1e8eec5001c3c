"""The primitive operation library of the activation search space.

23 unary and 9 binary scalar operations, each with its analytic derivative,
plus the output clamp that keeps the relaxed search space bounded and the
five baseline activations used for warm-starting and comparison.

Raw `fn`/`dfn` entries work on plain ndarrays; `eval_unary`/`eval_binary`
wrap them into tape-recorded tensor ops (with learnable gamma where the op
calls for one) and apply the clamp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "UNARY_OPS",
    "BINARY_OPS",
    "UNARY_ORDER",
    "BINARY_ORDER",
    "GAMMA_UNARY",
    "GAMMA_BINARY",
    "OpError",
    "CLAMP_LIMIT",
    "clamp_output",
    "eval_unary",
    "eval_binary",
    "eval_baseline",
    "BASELINES",
    "relu",
    "gelu",
    "silu",
    "elu",
    "leaky_relu",
    "sigmoid",
    "softplus",
    "signed_sqrt",
]

CLAMP_LIMIT = 10.0

# inputs to fast-growing ops are capped before evaluation so that neither the
# value nor its derivative can reach inf (which would poison gradients as
# 0 * inf); invisible after the output clamp
EXP_INPUT_LIMIT = 30.0
POLY_INPUT_LIMIT = 3.0e7


class OpError(Exception):
    pass


INV_SQRT2 = 1.0 / np.sqrt(2.0)
INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
TWO_OVER_SQRT_PI = 2.0 / np.sqrt(np.pi)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x):
    return np.maximum(0.0, x)


def gelu(x):
    # erfc form keeps full relative precision for deeply negative inputs
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * special.erfc(-x * INV_SQRT2)


def _gelu_grad(x):
    return 0.5 * special.erfc(-x * INV_SQRT2) + x * INV_SQRT_2PI * np.exp(-0.5 * x * x)


def silu(x):
    return x * sigmoid(x)


def _silu_grad(x):
    s = sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def leaky_relu(x, slope=0.01):
    return np.where(x > 0, x, slope * x)


def softplus(x):
    return np.logaddexp(0.0, x)


def signed_sqrt(x):
    # sqrt extended to all reals: sign(x) * sqrt(|x|)
    return np.sign(x) * np.sqrt(np.abs(x))


def _signed_sqrt_grad(x):
    ax = np.abs(x)
    return np.where(ax > 0, 0.5 / np.sqrt(np.where(ax > 0, ax, 1.0)), 0.0)


def _exp_guard(x):
    return np.clip(x, -EXP_INPUT_LIMIT, EXP_INPUT_LIMIT)


def _poly_guard(x):
    return np.clip(x, -POLY_INPUT_LIMIT, POLY_INPUT_LIMIT)


@dataclass(frozen=True)
class UnaryOp:
    name: str
    fn: callable = None
    dfn: callable = None
    needs_gamma: bool = False
    gamma_init: float = 0.0


@dataclass(frozen=True)
class BinaryOp:
    name: str
    fn: callable = None
    da: callable = None  # d out / d first arg, as fn of (a, b)
    db: callable = None
    needs_gamma: bool = False
    gamma_init: float = 0.0


# enumeration order fixes every tie-break in dropping/discretization
_UNARY_LIST = [
    UnaryOp("id", lambda x: x, lambda x: np.ones_like(x)),
    UnaryOp("neg", lambda x: -x, lambda x: -np.ones_like(x)),
    UnaryOp("square", lambda x: _poly_guard(x) ** 2, lambda x: 2.0 * _poly_guard(x)),
    UnaryOp("cube", lambda x: _poly_guard(x) ** 3, lambda x: 3.0 * _poly_guard(x) ** 2),
    UnaryOp("sqrt", signed_sqrt, _signed_sqrt_grad),
    UnaryOp("exp", lambda x: np.exp(_exp_guard(x)), lambda x: np.exp(_exp_guard(x))),
    UnaryOp("abs", np.abs, np.sign),  # subgradient 0 at the kink
    UnaryOp("const", needs_gamma=True, gamma_init=0.0),
    UnaryOp("scale", needs_gamma=True, gamma_init=1.0),
    UnaryOp("shift", needs_gamma=True, gamma_init=0.0),
    UnaryOp("sigmoid", sigmoid, lambda x: sigmoid(x) * (1.0 - sigmoid(x))),
    UnaryOp("softplus", softplus, sigmoid),
    UnaryOp("sinh", lambda x: np.sinh(_exp_guard(x)), lambda x: np.cosh(_exp_guard(x))),
    UnaryOp("tanh", np.tanh, lambda x: 1.0 - np.tanh(x) ** 2),
    UnaryOp("asinh", np.arcsinh, lambda x: 1.0 / np.sqrt(1.0 + x * x)),
    UnaryOp("atan", np.arctan, lambda x: 1.0 / (1.0 + x * x)),
    UnaryOp("erf", special.erf, lambda x: TWO_OVER_SQRT_PI * np.exp(-x * x)),
    UnaryOp("min0", lambda x: np.minimum(0.0, x), lambda x: (x < 0).astype(np.float64)),
    UnaryOp("max0", relu, lambda x: (x > 0).astype(np.float64)),
    UnaryOp("gelu", gelu, _gelu_grad),
    UnaryOp("silu", silu, _silu_grad),
    UnaryOp("elu", elu, lambda x: np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))),
    UnaryOp("leaky_relu", leaky_relu, lambda x: np.where(x > 0, 1.0, 0.01)),
]

_BINARY_LIST = [
    BinaryOp("add", np.add, lambda a, b: np.ones_like(a), lambda a, b: np.ones_like(b)),
    BinaryOp("sub", np.subtract, lambda a, b: np.ones_like(a), lambda a, b: -np.ones_like(b)),
    BinaryOp("mul", np.multiply, lambda a, b: b, lambda a, b: a),
    # ties route the gradient to the first argument
    BinaryOp("max", np.maximum,
             lambda a, b: (a >= b).astype(np.float64),
             lambda a, b: (b > a).astype(np.float64)),
    BinaryOp("min", np.minimum,
             lambda a, b: (a <= b).astype(np.float64),
             lambda a, b: (b < a).astype(np.float64)),
    BinaryOp("gate", lambda a, b: sigmoid(a) * b,
             lambda a, b: sigmoid(a) * (1.0 - sigmoid(a)) * b,
             lambda a, b: sigmoid(a)),
    BinaryOp("mix", needs_gamma=True, gamma_init=0.0),  # sigma(g)*a + (1-sigma(g))*b
    BinaryOp("left", lambda a, b: a.copy() if hasattr(a, "copy") else a,
             lambda a, b: np.ones_like(a), lambda a, b: np.zeros_like(b)),
    BinaryOp("right", lambda a, b: b.copy() if hasattr(b, "copy") else b,
             lambda a, b: np.zeros_like(a), lambda a, b: np.ones_like(b)),
]

UNARY_OPS = {op.name: op for op in _UNARY_LIST}
BINARY_OPS = {op.name: op for op in _BINARY_LIST}
UNARY_ORDER = tuple(op.name for op in _UNARY_LIST)
BINARY_ORDER = tuple(op.name for op in _BINARY_LIST)
GAMMA_UNARY = tuple(op.name for op in _UNARY_LIST if op.needs_gamma)
GAMMA_BINARY = tuple(op.name for op in _BINARY_LIST if op.needs_gamma)

assert len(UNARY_OPS) == 23 and len(BINARY_OPS) == 9


def clamp_output(y, limit=CLAMP_LIMIT):
    """Truncate |y| > limit to limit * sign(y); gradient passes unchanged
    inside the band and is zero outside."""
    if limit <= 0:
        raise OpError(f"clamp limit must be positive, got {limit}")
    return ad.unary(
        y,
        lambda v: np.clip(v, -limit, limit),
        lambda v: (np.abs(v) <= limit).astype(np.float64),
        label="clamp",
    )


def _gamma_check(op, gamma):
    if op.needs_gamma and gamma is None:
        raise OpError(f"op {op.name!r} requires a gamma parameter")
    if not op.needs_gamma and gamma is not None:
        raise OpError(f"op {op.name!r} does not take a gamma parameter")


def eval_unary(name, x, gamma=None, clamp=True, limit=CLAMP_LIMIT):
    """Apply one unary op to a tensor, then the output clamp.

    gamma must be a scalar Tensor exactly for the gamma-bearing ops
    (const, scale, shift); gradients flow to it through the tape.
    """
    try:
        op = UNARY_OPS[name]
    except KeyError:
        raise OpError(f"unknown unary op {name!r}") from None
    _gamma_check(op, gamma)
    if op.needs_gamma:
        if name == "const":
            out = ad.broadcast_to(gamma, x.shape)
        elif name == "scale":
            out = ad.mul(x, gamma)
        else:  # shift
            out = ad.add(x, gamma)
    else:
        out = ad.unary(x, op.fn, op.dfn, label=name)
    return clamp_output(out, limit) if clamp else out


def eval_binary(name, x1, x2, gamma=None, clamp=True, limit=CLAMP_LIMIT):
    """Apply one binary op elementwise to two same-shape tensors."""
    try:
        op = BINARY_OPS[name]
    except KeyError:
        raise OpError(f"unknown binary op {name!r}") from None
    _gamma_check(op, gamma)
    if x1.shape != x2.shape:
        raise ad.ShapeError(name, x1.shape, x2.shape)
    if name == "mix":
        w = ad.unary(gamma, sigmoid, lambda v: sigmoid(v) * (1.0 - sigmoid(v)), label="sigmoid")
        out = ad.add(ad.mul(x1, w), ad.mul(x2, ad.sub(Tensor(1.0), w)))
    elif name == "gate":
        s = ad.unary(x1, sigmoid, lambda v: sigmoid(v) * (1.0 - sigmoid(v)), label="sigmoid")
        out = ad.mul(s, x2)
    else:
        out = _binary_with_grads(op, x1, x2)
    return clamp_output(out, limit) if clamp else out


def _binary_with_grads(op, x1, x2):
    # finite inputs can still overflow to +-inf (e.g. mul of two huge values);
    # the clamp turns that into +-limit, so suppress the transient warning
    with np.errstate(over="ignore"):
        out = Tensor(op.fn(x1.data, x2.data))

    def backward(g):
        ad._accum(x1, g * op.da(x1.data, x2.data))
        ad._accum(x2, g * op.db(x1.data, x2.data))

    return ad._record((x1, x2), out, backward)


BASELINES = {
    "relu": relu,
    "gelu": gelu,
    "silu": silu,
    "elu": elu,
    "leaky_relu": leaky_relu,
}

_BASELINE_GRADS = {
    "relu": UNARY_OPS["max0"].dfn,
    "gelu": _gelu_grad,
    "silu": _silu_grad,
    "elu": UNARY_OPS["elu"].dfn,
    "leaky_relu": UNARY_OPS["leaky_relu"].dfn,
}


def canonical_baseline(name):
    key = name.strip().lower().replace("-", "_")
    if key == "leakyrelu":
        key = "leaky_relu"
    if key not in BASELINES:
        raise OpError(f"unknown baseline activation {name!r}; expected one of {sorted(BASELINES)}")
    return key


def eval_baseline(name, x):
    """Closed-form baseline activation on a scalar/array (no clamping)."""
    return BASELINES[canonical_baseline(name)](np.asarray(x, dtype=np.float64))


def baseline_site_fn(name):
    """Tape-recorded elementwise application of a baseline activation."""
    key = canonical_baseline(name)
    fn, dfn = BASELINES[key], _BASELINE_GRADS[key]

    def site(x):
        return ad.unary(x, fn, dfn, label=key)

    return site
