"""Minimal computer-algebra core: parse, differentiate, evaluate, integrate."""

from .nodes import (
    FUNCTIONS,
    ONE,
    T,
    TWO,
    VARIABLES,
    ZERO,
    BinOp,
    Call,
    Const,
    DomainError,
    EvalError,
    Expr,
    ExprError,
    Integral,
    LinearFlow,
    Neg,
    S,
    UnboundSymbolError,
    Var,
    X,
    add,
    arctan,
    cos,
    sin,
    tan,
    as_expr,
    call,
    diff,
    div,
    evaluate,
    exp,
    ln,
    mul,
    neg,
    power,
    sqrt,
    sub,
    substitute,
    to_string,
)
from .parse import ParseError, UnknownFunctionError, UnknownIdentifierError, parse
from .quad import (
    NumericFunction,
    QuadratureError,
    SingularIntegrandError,
    adaptive_simpson,
    antiderivative,
)

__all__ = [name for name in dir() if not name.startswith("_")]
