"""Expression tree nodes, smart constructors, evaluation and differentiation.

Trees are immutable.  Arithmetic on nodes goes through the smart constructors
(:func:`add`, :func:`mul`, ...), which fold constants and drop 0/1 identities
but do nothing else; there is no canonical form.

Evaluation accepts scalars or numpy arrays for the bound variables and raises
:class:`DomainError` instead of returning NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

VARIABLES = ("x", "t", "S")
FUNCTIONS = {
    "exp": 1,
    "ln": 1,
    "sin": 1,
    "cos": 1,
    "tan": 1,
    "arctan": 1,
    "sqrt": 1,
    "pow": 2,
}

# binding strength used by the printer; the parser implements the same grammar
PREC_ADD, PREC_MUL, PREC_NEG, PREC_POW, PREC_ATOM = 1, 2, 3, 4, 5


class ExprError(Exception):
    """Base class for expression errors."""


class EvalError(ExprError):
    pass


class UnboundSymbolError(EvalError):
    def __init__(self, name: str):
        super().__init__(f"unbound symbol {name!r}")
        self.name = name


class DomainError(EvalError):
    def __init__(self, message: str, subexpr: "Expr"):
        super().__init__(f"{message} in {subexpr}")
        self.subexpr = subexpr


class Expr:
    __slots__ = ()

    # -- arithmetic sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __pow__(self, other):
        return power(self, as_expr(other))

    def __rpow__(self, other):
        return power(as_expr(other), self)

    def __neg__(self):
        return neg(self)

    # -- interface ------------------------------------------------------------
    precedence = PREC_ATOM

    def eval(self, bindings: Mapping[str, object]):
        with np.errstate(all="ignore"):
            return self._eval(bindings)

    def __call__(self, bindings: Mapping[str, object] | None = None, **kw):
        env = dict(bindings or {})
        env.update(kw)
        return self.eval(env)

    def diff(self, var: str) -> "Expr":
        raise NotImplementedError

    def free_symbols(self) -> frozenset:
        return frozenset().union(*(c.free_symbols() for c in self.children()))

    def children(self) -> tuple:
        return ()

    def depends_on(self, var: str) -> bool:
        return var in self.free_symbols()

    def _eval(self, env):
        raise NotImplementedError

    def __str__(self):
        return to_string(self)


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    return Const(float(value))


def _is_const(e: Expr, value: float | None = None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


def _check(values, node: Expr, message: str):
    arr = np.asarray(values)
    if not np.all(np.isfinite(arr)):
        raise DomainError(message, node)
    return values


@dataclass(frozen=True, slots=True)
class Const(Expr):
    value: float

    def _eval(self, env):
        return self.value

    def diff(self, var):
        return ZERO

    def free_symbols(self):
        return frozenset()


@dataclass(frozen=True, slots=True)
class Var(Expr):
    name: str

    def _eval(self, env):
        try:
            return env[self.name]
        except KeyError:
            raise UnboundSymbolError(self.name) from None

    def diff(self, var):
        return ONE if var == self.name else ZERO

    def free_symbols(self):
        return frozenset({self.name})


@dataclass(frozen=True, slots=True)
class Neg(Expr):
    arg: Expr
    precedence = PREC_NEG

    def children(self):
        return (self.arg,)

    def _eval(self, env):
        return -self.arg._eval(env)

    def diff(self, var):
        return neg(self.arg.diff(var))


_BINARY_PREC = {"+": PREC_ADD, "-": PREC_ADD, "*": PREC_MUL, "/": PREC_MUL, "^": PREC_POW}


def _pow_values(base, expo, node):
    base_arr = np.asarray(base, dtype=float)
    expo_arr = np.asarray(expo, dtype=float)
    if np.any((base_arr == 0) & (expo_arr < 0)):
        raise DomainError("zero raised to a negative power", node)
    out = np.power(base_arr, expo_arr)
    _check(out, node, "power outside its real domain")
    return out if out.ndim else float(out)


@dataclass(frozen=True, slots=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr

    @property
    def precedence(self):
        return _BINARY_PREC[self.op]

    def children(self):
        return (self.left, self.right)

    def _eval(self, env):
        a = self.left._eval(env)
        b = self.right._eval(env)
        op = self.op
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            if np.any(np.asarray(b) == 0):
                raise DomainError("division by zero", self)
            return np.divide(a, b) if isinstance(a, np.ndarray) or isinstance(b, np.ndarray) else a / b
        return _pow_values(a, b, self)

    def diff(self, var):
        a, b = self.left, self.right
        da, db = a.diff(var), b.diff(var)
        op = self.op
        if op == "+":
            return add(da, db)
        if op == "-":
            return sub(da, db)
        if op == "*":
            return add(mul(da, b), mul(a, db))
        if op == "/":
            return div(sub(mul(da, b), mul(a, db)), power(b, TWO))
        return _diff_power(a, b, da, db, var)


def _diff_power(a, b, da, db, var):
    if not b.depends_on(var):
        return mul(mul(b, power(a, sub(b, ONE))), da)
    return mul(power(a, b), add(mul(db, call("ln", a)), div(mul(b, da), a)))


_UNARY_IMPL = {
    "exp": np.exp,
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "arctan": np.arctan,
}


@dataclass(frozen=True, slots=True)
class Call(Expr):
    name: str
    args: tuple

    def children(self):
        return self.args

    def _eval(self, env):
        vals = [a._eval(env) for a in self.args]
        name = self.name
        if name == "ln":
            if np.any(np.asarray(vals[0]) <= 0):
                raise DomainError("ln of a non-positive value", self)
            out = np.log(vals[0])
        elif name == "sqrt":
            if np.any(np.asarray(vals[0]) < 0):
                raise DomainError("sqrt of a negative value", self)
            out = np.sqrt(vals[0])
        elif name == "pow":
            return _pow_values(vals[0], vals[1], self)
        else:
            out = _UNARY_IMPL[name](vals[0])
        _check(out, self, f"{name} produced a non-finite value")
        return out if np.ndim(out) else float(out)

    def diff(self, var):
        if self.name == "pow":
            a, b = self.args
            return _diff_power(a, b, a.diff(var), b.diff(var), var)
        (a,) = self.args
        da = a.diff(var)
        if _is_const(da, 0.0):
            return ZERO
        name = self.name
        if name == "exp":
            inner = self
        elif name == "ln":
            return div(da, a)
        elif name == "sin":
            inner = call("cos", a)
        elif name == "cos":
            inner = neg(call("sin", a))
        elif name == "tan":
            return div(da, power(call("cos", a), TWO))
        elif name == "arctan":
            return div(da, add(ONE, power(a, TWO)))
        else:  # sqrt
            return div(da, mul(TWO, self))
        return mul(inner, da)


@dataclass(frozen=True, slots=True, eq=False)
class Integral(Expr):
    """Leaf standing for a numeric antiderivative ``u(var)``.

    Its derivative is the integrand, so trees that contain ``u`` can still be
    differentiated exactly.
    """

    fn: object  # NumericFunction; typed loosely to avoid an import cycle

    def _eval(self, env):
        try:
            x = env[self.fn.var]
        except KeyError:
            raise UnboundSymbolError(self.fn.var) from None
        return self.fn(x)

    def diff(self, var):
        return self.fn.integrand if var == self.fn.var else ZERO

    def free_symbols(self):
        return frozenset({self.fn.var}) | self.fn.integrand.free_symbols()


class LinearFlow(Expr):
    """``row . expm(gen * var) . init`` for a constant generator matrix.

    Used for the time factors of symmetry generators obtained from a linear
    constant-coefficient ODE system; differentiation is exact
    (``row -> row @ gen``).
    """

    __slots__ = ("row", "gen", "init", "var", "label")

    def __init__(self, row, gen, init, var: str = "t", label: str = "T"):
        self.row = np.asarray(row, dtype=float)
        self.gen = np.asarray(gen, dtype=float)
        self.init = np.asarray(init, dtype=float)
        self.var = var
        self.label = label

    def _eval(self, env):
        from scipy.linalg import expm

        try:
            tv = env[self.var]
        except KeyError:
            raise UnboundSymbolError(self.var) from None
        arr = np.asarray(tv, dtype=float)
        flat = arr.ravel()
        uniq, inverse = np.unique(flat, return_inverse=True)
        vals = np.array([self.row @ expm(self.gen * s) @ self.init for s in uniq])
        out = vals[inverse].reshape(arr.shape)
        return out if out.ndim else float(out)

    def diff(self, var):
        if var != self.var:
            return ZERO
        return LinearFlow(self.row @ self.gen, self.gen, self.init, self.var, self.label + "'")

    def free_symbols(self):
        return frozenset({self.var})


ZERO = Const(0.0)
ONE = Const(1.0)
TWO = Const(2.0)


# -- smart constructors --------------------------------------------------------


def _fold(op, a: Expr, b: Expr):
    if isinstance(a, Const) and isinstance(b, Const):
        try:
            with np.errstate(all="ignore"):
                val = BinOp(op, a, b)._eval({})
        except DomainError:
            return None
        if math.isfinite(val):
            return Const(float(val))
    return None


def add(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return _fold("+", a, b) or BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    return _fold("-", a, b) or BinOp("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    return _fold("*", a, b) or BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0) and not _is_const(b, 0.0):
        return ZERO
    if _is_const(b, 1.0):
        return a
    return _fold("/", a, b) or BinOp("/", a, b)


def power(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0.0):
        return ONE
    if _is_const(b, 1.0):
        return a
    return _fold("^", a, b) or BinOp("^", a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def call(name: str, *args: Expr) -> Expr:
    if name not in FUNCTIONS:
        raise ExprError(f"unknown function {name!r}")
    node = Call(name, tuple(as_expr(a) for a in args))
    if all(isinstance(a, Const) for a in node.args):
        try:
            val = node.eval({})
        except DomainError:
            return node
        return Const(float(val))
    return node


def exp(a) -> Expr:
    return call("exp", as_expr(a))


def ln(a) -> Expr:
    return call("ln", as_expr(a))


def sqrt(a) -> Expr:
    return call("sqrt", as_expr(a))


def sin(a) -> Expr:
    return call("sin", as_expr(a))


def cos(a) -> Expr:
    return call("cos", as_expr(a))


def tan(a) -> Expr:
    return call("tan", as_expr(a))


def arctan(a) -> Expr:
    return call("arctan", as_expr(a))


def var(name: str) -> Var:
    return Var(name)


X, T, S = Var("x"), Var("t"), Var("S")


def evaluate(e: Expr, bindings: Mapping[str, object] | None = None, **kw):
    env = dict(bindings or {})
    env.update(kw)
    return e.eval(env)


def diff(e: Expr, v: str) -> Expr:
    return e.diff(v)


def substitute(e: Expr, name: str, replacement: Expr) -> Expr:
    """Replace every occurrence of variable ``name`` by ``replacement``."""
    if isinstance(e, Var):
        return replacement if e.name == name else e
    if isinstance(e, Const):
        return e
    if isinstance(e, Neg):
        return neg(substitute(e.arg, name, replacement))
    if isinstance(e, BinOp):
        left = substitute(e.left, name, replacement)
        right = substitute(e.right, name, replacement)
        return {"+": add, "-": sub, "*": mul, "/": div, "^": power}[e.op](left, right)
    if isinstance(e, Call):
        return call(e.name, *(substitute(a, name, replacement) for a in e.args))
    if name in e.free_symbols():
        raise ExprError(f"cannot substitute {name!r} inside {type(e).__name__}")
    return e


# -- printing ---------------------------------------------------------------------


def _const_str(value: float) -> str:
    text = repr(float(value))
    return f"({text})" if value < 0 or text.startswith("-") else text


def to_string(e: Expr) -> str:
    if isinstance(e, Const):
        return _const_str(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        inner = to_string(e.arg)
        if e.arg.precedence < PREC_NEG:
            inner = f"({inner})"
        return "-" + inner
    if isinstance(e, BinOp):
        lhs, rhs = to_string(e.left), to_string(e.right)
        p = e.precedence
        if e.op == "^":
            if e.left.precedence < PREC_ATOM:
                lhs = f"({lhs})"
            if e.right.precedence < PREC_NEG:
                rhs = f"({rhs})"
            return f"{lhs}^{rhs}"
        if e.left.precedence < p:
            lhs = f"({lhs})"
        if e.right.precedence <= p:
            rhs = f"({rhs})"
        return f"{lhs} {e.op} {rhs}"
    if isinstance(e, Call):
        return f"{e.name}({', '.join(to_string(a) for a in e.args)})"
    if isinstance(e, Integral):
        return f"int[{to_string(e.fn.integrand)} d{e.fn.var}; {e.fn.x_ref!r}]"
    if isinstance(e, LinearFlow):
        return f"{e.label}({e.var})"
    raise TypeError(type(e))
