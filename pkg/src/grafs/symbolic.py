"""Render a frozen cell as a human-readable, simplifiable formula.

The expression tree keeps full-precision coefficients so the simplified form
still evaluates identically to the raw cell; only the *printed* string
rounds coefficients for readability.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops as op_lib
from .ops import UNARY_OPS

__all__ = ["Expr", "Var", "Num", "Fun", "Bin", "cell_expression", "simplify", "render", "to_symbolic"]


class Expr:
    def evaluate(self, x):
        raise NotImplementedError


@dataclass(frozen=True)
class Var(Expr):
    def evaluate(self, x):
        return x


@dataclass(frozen=True)
class Num(Expr):
    value: float

    def evaluate(self, x):
        return np.full_like(np.asarray(x, dtype=np.float64), self.value)


@dataclass(frozen=True)
class Fun(Expr):
    """Named scalar function application; `param` holds a leaky-relu slope."""

    name: str
    arg: Expr
    param: float = None

    def evaluate(self, x):
        v = self.arg.evaluate(x)
        if self.name == "leaky_relu":
            return op_lib.leaky_relu(v, slope=self.param if self.param is not None else 0.01)
        if self.name == "neg":
            return -v
        if self.name == "square":
            return v**2
        if self.name == "cube":
            return v**3
        return UNARY_OPS[self.name].fn(v)


@dataclass(frozen=True)
class Bin(Expr):
    op: str  # +, -, *, max, min
    lhs: Expr
    rhs: Expr

    def evaluate(self, x):
        a = self.lhs.evaluate(x)
        b = self.rhs.evaluate(x)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if self.op == "max":
            return np.maximum(a, b)
        return np.minimum(a, b)


def _unary_expr(name, gamma, arg):
    if name == "id":
        return arg
    if name == "neg":
        return Fun("neg", arg)
    if name == "square":
        return Fun("square", arg)
    if name == "cube":
        return Fun("cube", arg)
    if name == "const":
        return Num(gamma)
    if name == "scale":
        return Bin("*", Num(gamma), arg)
    if name == "shift":
        return Bin("+", arg, Num(gamma))
    if name == "leaky_relu":
        return Fun("leaky_relu", arg, param=0.01)
    if name == "max0":
        return Fun("max0", arg)
    return Fun(name, arg)


def _binary_expr(name, gamma, lhs, rhs):
    if name == "left":
        return lhs
    if name == "right":
        return rhs
    if name == "add":
        return Bin("+", lhs, rhs)
    if name == "sub":
        return Bin("-", lhs, rhs)
    if name == "mul":
        return Bin("*", lhs, rhs)
    if name == "max":
        return Bin("max", lhs, rhs)
    if name == "min":
        return Bin("min", lhs, rhs)
    if name == "gate":
        return Bin("*", Fun("sigmoid", lhs), rhs)
    # mix: printed as its evaluated coefficient pair
    w = float(op_lib.sigmoid(gamma))
    return Bin("+", Bin("*", Num(w), lhs), Bin("*", Num(1.0 - w), rhs))


def cell_expression(activation):
    """Raw (unsimplified) expression tree of a DiscreteActivation."""
    x = Var()
    u1 = _unary_expr(activation.ops["u1"], activation.gamma_value("u1"), x)
    u2 = _unary_expr(activation.ops["u2"], activation.gamma_value("u2"), x)
    bot = _binary_expr(activation.ops["b_bot"], activation.gamma_value("b_bot"), u1, u2)
    u3 = _unary_expr(activation.ops["u3"], activation.gamma_value("u3"), bot)
    u4 = _unary_expr(activation.ops["u4"], activation.gamma_value("u4"), x)
    return _binary_expr(activation.ops["b_top"], activation.gamma_value("b_top"), u3, u4)


_SAFE_CONST_FOLD = {
    "neg", "square", "cube", "sqrt", "abs", "sigmoid", "softplus", "tanh",
    "asinh", "atan", "erf", "min0", "max0", "gelu", "silu", "elu",
    "leaky_relu", "exp", "sinh",
}


def simplify(expr):
    """Bottom-up folding: double negation, constant arithmetic, identity
    elements, and nested leaky-relu slope products."""
    if isinstance(expr, (Var, Num)):
        return expr
    if isinstance(expr, Fun):
        arg = simplify(expr.arg)
        if expr.name == "neg" and isinstance(arg, Fun) and arg.name == "neg":
            return arg.arg
        if expr.name == "leaky_relu" and isinstance(arg, Fun) and arg.name == "leaky_relu":
            s1 = expr.param if expr.param is not None else 0.01
            s2 = arg.param if arg.param is not None else 0.01
            return simplify(Fun("leaky_relu", arg.arg, param=s1 * s2))
        if isinstance(arg, Num) and expr.name in _SAFE_CONST_FOLD:
            folded = Fun(expr.name, arg, param=expr.param)
            return Num(float(folded.evaluate(np.float64(0.0))))
        return Fun(expr.name, arg, param=expr.param)
    lhs = simplify(expr.lhs)
    rhs = simplify(expr.rhs)
    if isinstance(lhs, Num) and isinstance(rhs, Num):
        return Num(float(Bin(expr.op, lhs, rhs).evaluate(np.float64(0.0))))
    if expr.op == "+":
        if isinstance(lhs, Num) and lhs.value == 0.0:
            return rhs
        if isinstance(rhs, Num) and rhs.value == 0.0:
            return lhs
    elif expr.op == "-":
        if isinstance(rhs, Num) and rhs.value == 0.0:
            return lhs
    elif expr.op == "*":
        for a, b in ((lhs, rhs), (rhs, lhs)):
            if isinstance(a, Num):
                if a.value == 1.0:
                    return b
                if a.value == 0.0:
                    return Num(0.0)
    return Bin(expr.op, lhs, rhs)


def _fmt(value):
    """Publication-style display: up to 4 significant digits.

    Display only — the expression tree keeps full precision, and exact
    values live in the activation's JSON document."""
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return f"{value:.4g}"


def render(expr):
    if isinstance(expr, Var):
        return "x"
    if isinstance(expr, Num):
        return _fmt(expr.value)
    if isinstance(expr, Fun):
        inner = render(expr.arg)
        if expr.name == "neg":
            return f"-({inner})"
        if expr.name == "square":
            return f"({inner})^2" if not isinstance(expr.arg, Var) else "x^2"
        if expr.name == "cube":
            return f"({inner})^3" if not isinstance(expr.arg, Var) else "x^3"
        if expr.name == "sqrt":
            return f"sign({inner})*sqrt(|{inner}|)"
        if expr.name == "min0":
            return f"min(0, {inner})"
        if expr.name == "max0":
            return f"relu({inner})"
        if expr.name == "leaky_relu":
            slope = expr.param if expr.param is not None else 0.01
            if slope == 0.01:
                return f"leaky_relu({inner})"
            return f"leaky_relu[{slope:g}]({inner})"
        return f"{expr.name}({inner})"
    lhs, rhs = render(expr.lhs), render(expr.rhs)
    if expr.op in ("max", "min"):
        return f"{expr.op}({lhs}, {rhs})"
    if expr.op == "*":
        if isinstance(expr.lhs, Bin) and expr.lhs.op in "+-":
            lhs = f"({lhs})"
        if isinstance(expr.rhs, Bin) and expr.rhs.op in "+-":
            rhs = f"({rhs})"
        return f"{lhs}*{rhs}"
    if expr.op == "-" and isinstance(expr.rhs, Bin) and expr.rhs.op in "+-":
        rhs = f"({rhs})"
    return f"{lhs} {expr.op} {rhs}"


def to_symbolic(activation):
    """(raw string, simplified string) for a DiscreteActivation."""
    raw = cell_expression(activation)
    return render(raw), render(simplify(raw))


def simplified_expression(activation):
    return simplify(cell_expression(activation))
