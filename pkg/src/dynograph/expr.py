"""Expression trees for drifts, intensities and diffusion coefficients.

Nodes are frozen dataclasses, so two trees compare equal iff they are
structurally identical.  Python operators are overloaded on every node to
make programmatic model building readable::

    drift = lam + rho * T - alpha * Q - mu_q * Q

Evaluation happens in three places: :func:`evaluate` (scalar, used by the
influence probe and for small checks), and the compiled/vectorized kernels
in :mod:`dynograph._kernels` / :mod:`dynograph._fallback`, which run the
postfix program produced by :func:`compile_program`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping, Union

import numpy as np

from .errors import EvaluationError

__all__ = [
    "Expr", "Const", "Time", "Comp", "Attr", "Input",
    "Add", "Sub", "Mul", "Div", "Neg", "Exp", "Min", "Max", "Indicator",
    "COMPARATORS", "as_expr", "walk", "references", "contains_time",
    "evaluate", "to_sexpr", "compile_program", "Program",
]

COMPARATORS = ("<", "<=", "==", ">=", ">")

Number = Union[int, float]


class Expr:
    """Base class of all expression nodes."""

    __slots__ = ()

    def children(self) -> tuple["Expr", ...]:
        return ()

    def __add__(self, other):
        return Add(self, as_expr(other))

    def __radd__(self, other):
        return Add(as_expr(other), self)

    def __sub__(self, other):
        return Sub(self, as_expr(other))

    def __rsub__(self, other):
        return Sub(as_expr(other), self)

    def __mul__(self, other):
        return Mul(self, as_expr(other))

    def __rmul__(self, other):
        return Mul(as_expr(other), self)

    def __truediv__(self, other):
        return Div(self, as_expr(other))

    def __rtruediv__(self, other):
        return Div(as_expr(other), self)

    def __neg__(self):
        return Neg(self)

    def __str__(self) -> str:
        return to_sexpr(self)


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, float, np.floating, np.integer)) and not isinstance(value, bool):
        return Const(float(value))
    raise TypeError(f"cannot convert {value!r} to an expression")


@dataclass(frozen=True, eq=True)
class Const(Expr):
    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))
        if not math.isfinite(self.value):
            raise ValueError("constants must be finite")


@dataclass(frozen=True, eq=True)
class Time(Expr):
    pass


@dataclass(frozen=True, eq=True)
class Comp(Expr):
    """Left-limit value of a state component."""
    name: str


@dataclass(frozen=True, eq=True)
class Attr(Expr):
    name: str


@dataclass(frozen=True, eq=True)
class Input(Expr):
    """Value of a piecewise-constant exogenous schedule."""
    name: str


@dataclass(frozen=True, eq=True)
class _Binary(Expr):
    left: Expr
    right: Expr

    def children(self):
        return (self.left, self.right)


class Add(_Binary):
    pass


class Sub(_Binary):
    pass


class Mul(_Binary):
    pass


class Div(_Binary):
    pass


class Min(_Binary):
    pass


class Max(_Binary):
    pass


@dataclass(frozen=True, eq=True)
class Neg(Expr):
    arg: Expr

    def children(self):
        return (self.arg,)


@dataclass(frozen=True, eq=True)
class Exp(Expr):
    arg: Expr

    def children(self):
        return (self.arg,)


@dataclass(frozen=True, eq=True)
class Indicator(Expr):
    op: str
    left: Expr
    right: Expr

    def __post_init__(self):
        if self.op not in COMPARATORS:
            raise ValueError(f"unknown comparison {self.op!r}")

    def children(self):
        return (self.left, self.right)


def walk(expr: Expr) -> Iterator[Expr]:
    """Pre-order traversal."""
    stack = [expr]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(node.children()))


def references(expr: Expr, kind: type) -> set[str]:
    return {node.name for node in walk(expr) if isinstance(node, kind)}


def contains_time(expr: Expr) -> bool:
    return any(isinstance(node, Time) for node in walk(expr))


_BINARY_FUNCS: dict[type, Callable[[float, float], float]] = {
    Add: lambda a, b: a + b,
    Sub: lambda a, b: a - b,
    Mul: lambda a, b: a * b,
    Min: min,
    Max: max,
}

_CMP_FUNCS: dict[str, Callable[[float, float], bool]] = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    "==": lambda a, b: a == b,
    ">=": lambda a, b: a >= b,
    ">": lambda a, b: a > b,
}


def evaluate(expr: Expr, t: float, state: Mapping[str, float],
             attrs: Mapping[str, float] = {}, inputs: Mapping[str, float] = {}) -> float:
    """Evaluate ``expr`` at time ``t`` with component left limits ``state``.

    Raises :class:`EvaluationError` on division by zero, exponential
    overflow, or any other non-finite intermediate.
    """
    def ev(node: Expr) -> float:
        if isinstance(node, Const):
            return node.value
        if isinstance(node, Time):
            return float(t)
        if isinstance(node, Comp):
            return float(state[node.name])
        if isinstance(node, Attr):
            return float(attrs[node.name])
        if isinstance(node, Input):
            return float(inputs[node.name])
        if isinstance(node, Neg):
            return -ev(node.arg)
        if isinstance(node, Exp):
            x = ev(node.arg)
            try:
                return math.exp(x)
            except OverflowError:
                raise EvaluationError("overflow", f"exp({x!r}) overflows") from None
        if isinstance(node, Indicator):
            return 1.0 if _CMP_FUNCS[node.op](ev(node.left), ev(node.right)) else 0.0
        if isinstance(node, Div):
            num, den = ev(node.left), ev(node.right)
            if den == 0.0:
                raise EvaluationError("div0", "division by zero")
            return num / den
        a, b = ev(node.left), ev(node.right)
        return _BINARY_FUNCS[type(node)](a, b)

    value = ev(expr)
    if not math.isfinite(value):
        raise EvaluationError("nonfinite", f"expression evaluated to {value!r}")
    return value


def _fmt_num(x: float) -> str:
    return repr(float(x))


_SEXPR_OPS = {Add: "+", Sub: "-", Mul: "*", Div: "/", Min: "min", Max: "max"}


def to_sexpr(expr: Expr) -> str:
    """Prefix s-expression, used by the canonical JSON form."""
    if isinstance(expr, Const):
        return _fmt_num(expr.value)
    if isinstance(expr, Time):
        return "t"
    if isinstance(expr, Comp):
        return f"(comp {expr.name})"
    if isinstance(expr, Attr):
        return f"(attr {expr.name})"
    if isinstance(expr, Input):
        return f"(input {expr.name})"
    if isinstance(expr, Neg):
        return f"(neg {to_sexpr(expr.arg)})"
    if isinstance(expr, Exp):
        return f"(exp {to_sexpr(expr.arg)})"
    if isinstance(expr, Indicator):
        return f"(ind {expr.op} {to_sexpr(expr.left)} {to_sexpr(expr.right)})"
    return f"({_SEXPR_OPS[type(expr)]} {to_sexpr(expr.left)} {to_sexpr(expr.right)})"


# --- postfix compilation -------------------------------------------------

# Opcodes shared with the Cython kernel; keep in sync with _kernels.pyx.
OP_CONST, OP_TIME, OP_COMP, OP_ATTR, OP_INPUT = 0, 1, 2, 3, 4
OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_MIN, OP_MAX = 5, 6, 7, 8, 9, 10
OP_NEG, OP_EXP = 11, 12
OP_LT, OP_LE, OP_EQ, OP_GE, OP_GT = 13, 14, 15, 16, 17

_BIN_OPCODES = {Add: OP_ADD, Sub: OP_SUB, Mul: OP_MUL, Div: OP_DIV, Min: OP_MIN, Max: OP_MAX}
_CMP_OPCODES = {"<": OP_LT, "<=": OP_LE, "==": OP_EQ, ">=": OP_GE, ">": OP_GT}


@dataclass(frozen=True)
class Program:
    """Concatenated postfix code for several expressions.

    Expression ``i`` occupies ``ops[start[i]:start[i] + length[i]]``.
    ``args`` holds the constant-pool index for OP_CONST and the slot index
    for OP_COMP / OP_ATTR / OP_INPUT.
    """
    ops: np.ndarray
    args: np.ndarray
    consts: np.ndarray
    start: np.ndarray
    length: np.ndarray
    max_stack: int


def compile_program(exprs: list[Expr], comp_index: Mapping[str, int],
                    attr_index: Mapping[str, int], input_index: Mapping[str, int]) -> Program:
    ops: list[int] = []
    args: list[int] = []
    consts: list[float] = []
    starts, lengths = [], []
    max_depth = 1

    def emit(node: Expr, depth: int) -> int:
        # returns the stack depth reached while evaluating node
        if isinstance(node, Const):
            ops.append(OP_CONST); args.append(len(consts)); consts.append(node.value)
            return depth + 1
        if isinstance(node, Time):
            ops.append(OP_TIME); args.append(0)
            return depth + 1
        if isinstance(node, Comp):
            ops.append(OP_COMP); args.append(comp_index[node.name])
            return depth + 1
        if isinstance(node, Attr):
            ops.append(OP_ATTR); args.append(attr_index[node.name])
            return depth + 1
        if isinstance(node, Input):
            ops.append(OP_INPUT); args.append(input_index[node.name])
            return depth + 1
        if isinstance(node, (Neg, Exp)):
            d = emit(node.arg, depth)
            ops.append(OP_NEG if isinstance(node, Neg) else OP_EXP); args.append(0)
            return d
        if isinstance(node, Indicator):
            d1 = emit(node.left, depth)
            d2 = emit(node.right, depth + 1)
            ops.append(_CMP_OPCODES[node.op]); args.append(0)
            return max(d1, d2)
        d1 = emit(node.left, depth)
        d2 = emit(node.right, depth + 1)
        ops.append(_BIN_OPCODES[type(node)]); args.append(0)
        return max(d1, d2)

    for expr in exprs:
        starts.append(len(ops))
        max_depth = max(max_depth, emit(expr, 0))
        lengths.append(len(ops) - starts[-1])

    return Program(
        ops=np.asarray(ops, dtype=np.int32),
        args=np.asarray(args, dtype=np.int32),
        consts=np.asarray(consts if consts else [0.0], dtype=np.float64),
        start=np.asarray(starts, dtype=np.int32),
        length=np.asarray(lengths, dtype=np.int32),
        max_stack=max_depth,
    )
