"""Closed-form scalar expressions in ``t`` and ``theta`` with exact derivatives.

Strings are parsed through Python's ``ast`` module against a small whitelist
(``+ - * / **``, numeric exponents, ``exp log sqrt sin cos tan``, the
constants ``pi`` and ``e``).  The resulting tree evaluates on numpy arrays and
differentiates symbolically, so flow parameters built from it carry exact
first and second derivatives.
"""

from __future__ import annotations

import ast
import math

import numpy as np

VARIABLES = ("t", "theta")
_ALIASES = {"θ": "theta", "x": "theta", "tau": "t", "τ": "t"}
_CONSTANTS = {"pi": math.pi, "e": math.e}
_FUNCS = ("exp", "log", "sqrt", "sin", "cos", "tan")


class ExpressionError(ValueError):
    """Raised for tokens outside the whitelist; carries the column offset."""

    def __init__(self, message, position=None):
        self.position = position
        if position is not None:
            message = f"{message} at position {position}"
        super().__init__(message)


class Expr:
    """Base node.  Subclasses implement ``_eval``, ``_diff`` and ``__str__``."""

    def __call__(self, t=0.0, theta=0.0):
        t = np.asarray(t, float)
        theta = np.asarray(theta, float)
        out = self._eval({"t": t, "theta": theta})
        shape = np.broadcast_shapes(t.shape, theta.shape)
        if shape == ():
            return float(out)
        out = np.asarray(out, float)
        if out.shape != shape:
            out = np.broadcast_to(out, shape).copy()
        return out

    def diff(self, var):
        if var not in VARIABLES:
            raise ValueError(f"cannot differentiate with respect to {var!r}")
        cache = self.__dict__.setdefault("_dcache", {})
        if var not in cache:
            cache[var] = self._diff(var)
        return cache[var]

    def d(self, var):
        return self.diff(var)

    def depends_on(self, var):
        return var in self.free_vars()

    def free_vars(self):
        return set()

    def substitute(self, var, other):
        """Replace variable ``var`` by the expression ``other``."""
        return self

    # arithmetic helpers with light constant folding
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Expr({self})"


def _wrap(value):
    if isinstance(value, Expr):
        return value
    return Const(float(value))


class Const(Expr):
    def __init__(self, value):
        self.value = float(value)

    def _eval(self, env):
        return self.value

    def _diff(self, var):
        return ZERO

    def __str__(self):
        return repr(self.value)


ZERO = Const(0.0)
ONE = Const(1.0)


class Var(Expr):
    def __init__(self, name):
        self.name = name

    def _eval(self, env):
        return env[self.name]

    def _diff(self, var):
        return ONE if var == self.name else ZERO

    def free_vars(self):
        return {self.name}

    def substitute(self, var, other):
        return other if var == self.name else self

    def __str__(self):
        return self.name


class Add(Expr):
    def __init__(self, a, b):
        self.a, self.b = a, b

    def _eval(self, env):
        return self.a._eval(env) + self.b._eval(env)

    def _diff(self, var):
        return add(self.a._diff(var), self.b._diff(var))

    def free_vars(self):
        return self.a.free_vars() | self.b.free_vars()

    def substitute(self, var, other):
        return add(self.a.substitute(var, other), self.b.substitute(var, other))

    def __str__(self):
        return f"({self.a} + {self.b})"


class Mul(Expr):
    def __init__(self, a, b):
        self.a, self.b = a, b

    def _eval(self, env):
        return self.a._eval(env) * self.b._eval(env)

    def _diff(self, var):
        return add(mul(self.a._diff(var), self.b), mul(self.a, self.b._diff(var)))

    def free_vars(self):
        return self.a.free_vars() | self.b.free_vars()

    def substitute(self, var, other):
        return mul(self.a.substitute(var, other), self.b.substitute(var, other))

    def __str__(self):
        return f"({self.a} * {self.b})"


class Div(Expr):
    def __init__(self, a, b):
        self.a, self.b = a, b

    def _eval(self, env):
        return self.a._eval(env) / self.b._eval(env)

    def _diff(self, var):
        num = add(mul(self.a._diff(var), self.b), neg(mul(self.a, self.b._diff(var))))
        return div(num, power(self.b, 2.0))

    def free_vars(self):
        return self.a.free_vars() | self.b.free_vars()

    def substitute(self, var, other):
        return div(self.a.substitute(var, other), self.b.substitute(var, other))

    def __str__(self):
        return f"({self.a} / {self.b})"


class Neg(Expr):
    def __init__(self, a):
        self.a = a

    def _eval(self, env):
        return -self.a._eval(env)

    def _diff(self, var):
        return neg(self.a._diff(var))

    def free_vars(self):
        return self.a.free_vars()

    def substitute(self, var, other):
        return neg(self.a.substitute(var, other))

    def __str__(self):
        return f"(-{self.a})"


class Pow(Expr):
    """``base ** p`` with a numeric exponent ``p``."""

    def __init__(self, base, p):
        self.base, self.p = base, float(p)

    def _eval(self, env):
        return np.power(self.base._eval(env), self.p)

    def _diff(self, var):
        inner = self.base._diff(var)
        return mul(mul(Const(self.p), power(self.base, self.p - 1.0)), inner)

    def free_vars(self):
        return self.base.free_vars()

    def substitute(self, var, other):
        return power(self.base.substitute(var, other), self.p)

    def __str__(self):
        return f"({self.base} ** {self.p!r})"


class Func(Expr):
    def __init__(self, name, arg):
        self.name, self.arg = name, arg

    def _eval(self, env):
        return getattr(np, self.name)(self.arg._eval(env))

    def _diff(self, var):
        a = self.arg
        da = a._diff(var)
        if isinstance(da, Const) and da.value == 0.0:
            return ZERO
        outer = {
            "exp": lambda: Func("exp", a),
            "log": lambda: div(ONE, a),
            "sqrt": lambda: div(Const(0.5), Func("sqrt", a)),
            "sin": lambda: Func("cos", a),
            "cos": lambda: neg(Func("sin", a)),
            "tan": lambda: add(ONE, power(Func("tan", a), 2.0)),
        }[self.name]()
        return mul(outer, da)

    def free_vars(self):
        return self.arg.free_vars()

    def substitute(self, var, other):
        return func(self.name, self.arg.substitute(var, other))

    def __str__(self):
        return f"{self.name}({self.arg})"


def _is_const(e, value=None):
    return isinstance(e, Const) and (value is None or e.value == value)


def add(a, b):
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Add(a, b)


def neg(a):
    if _is_const(a):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.a
    return Neg(a)


def mul(a, b):
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    return Mul(a, b)


def div(a, b):
    if _is_const(b, 0.0):
        raise ZeroDivisionError("division by the constant zero")
    if _is_const(a, 0.0):
        return ZERO
    if _is_const(a) and _is_const(b):
        return Const(a.value / b.value)
    if _is_const(b, 1.0):
        return a
    return Div(a, b)


def power(base, p):
    p = float(p)
    if p == 0.0:
        return ONE
    if p == 1.0:
        return base
    if _is_const(base):
        return Const(base.value**p)
    return Pow(base, p)


def func(name, arg):
    if _is_const(arg):
        return Const(float(getattr(np, name)(arg.value)))
    return Func(name, arg)


def var(name):
    name = _ALIASES.get(name, name)
    if name not in VARIABLES:
        raise ValueError(f"unknown variable {name!r}")
    return Var(name)


def const(value):
    return Const(value)


def _position(node, text):
    return getattr(node, "col_offset", None)


def parse(text):
    """Parse ``text`` into an :class:`Expr`.

    >>> parse("1 - 2*t")(t=0.25)
    0.5
    """
    if isinstance(text, (int, float)):
        return Const(text)
    if not isinstance(text, str):
        raise ExpressionError(f"expected a string expression, got {type(text).__name__}")
    src = text.replace("^", "**")
    try:
        tree = ast.parse(src.strip(), mode="eval")
    except SyntaxError as exc:
        offset = (exc.offset or 1) - 1
        raise ExpressionError(f"syntax error in {text!r}", offset) from None
    return _build(tree.body, text)


def _numeric_value(node, text):
    """Evaluate a constant-only subtree (used for exponents)."""
    e = _build(node, text)
    if not isinstance(e, Const):
        raise ExpressionError("exponent must be a numeric constant", _position(node, text))
    return e.value


def _build(node, text):
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ExpressionError(f"unsupported literal {node.value!r}", _position(node, text))
        return Const(node.value)
    if isinstance(node, ast.Name):
        name = _ALIASES.get(node.id, node.id)
        if name in VARIABLES:
            return Var(name)
        if name in _CONSTANTS:
            return Const(_CONSTANTS[name])
        raise ExpressionError(f"unknown token {node.id!r}", _position(node, text))
    if isinstance(node, ast.UnaryOp):
        operand = _build(node.operand, text)
        if isinstance(node.op, ast.USub):
            return neg(operand)
        if isinstance(node.op, ast.UAdd):
            return operand
        raise ExpressionError("unsupported unary operator", _position(node, text))
    if isinstance(node, ast.BinOp):
        if isinstance(node.op, ast.Pow):
            return power(_build(node.left, text), _numeric_value(node.right, text))
        a, b = _build(node.left, text), _build(node.right, text)
        if isinstance(node.op, ast.Add):
            return add(a, b)
        if isinstance(node.op, ast.Sub):
            return add(a, neg(b))
        if isinstance(node.op, ast.Mult):
            return mul(a, b)
        if isinstance(node.op, ast.Div):
            return div(a, b)
        raise ExpressionError("unsupported binary operator", _position(node, text))
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
            name = getattr(node.func, "id", "?")
            raise ExpressionError(f"unknown function {name!r}", _position(node, text))
        if len(node.args) != 1 or node.keywords:
            raise ExpressionError(f"{node.func.id} takes exactly one argument", _position(node, text))
        return func(node.func.id, _build(node.args[0], text))
    raise ExpressionError(f"unsupported syntax {type(node).__name__}", _position(node, text))
