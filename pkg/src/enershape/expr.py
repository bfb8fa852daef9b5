"""Tiny scalar expression language: parsing, evaluation, differentiation.

Model files describe mass matrices, potentials and actuation rows as text
expressions over named constants and coordinate variables.  This module
turns that text into immutable syntax trees that can be evaluated, printed
back to equivalent text, and differentiated symbolically.

Grammar (binding loosest to tightest; ``^`` is right-associative):

    expr   := term (("+" | "-") term)*
    term   := factor (("*" | "/") factor)*
    factor := "-" factor | power
    power  := atom ("^" factor)?
    atom   := number | name | name "(" expr ")" | "(" expr ")"

Evaluation is strict about domains: division by zero, ``log`` of a
non-positive value, ``sqrt`` of a negative value and fractional powers of
negative bases all raise :class:`DomainError` instead of producing NaN.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

__all__ = [
    "Expr",
    "Num",
    "Var",
    "Neg",
    "Bin",
    "Fn",
    "ExprError",
    "ParseError",
    "UnknownFunctionError",
    "UnboundNameError",
    "DomainError",
    "parse",
    "evaluate",
    "differentiate",
    "to_text",
    "free_names",
]

FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt", "abs")


class ExprError(Exception):
    """Base class for all expression errors."""


class ParseError(ExprError):
    """Malformed expression text.

    ``offset`` is the byte offset into the UTF-8 encoding of the source
    text at which the problem was detected.
    """

    def __init__(self, message, text, pos):
        self.offset = len(text[:pos].encode("utf-8"))
        super().__init__(f"{message} (byte offset {self.offset})")


class UnknownFunctionError(ParseError):
    pass


class UnboundNameError(ExprError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"unbound name {name!r}")


class DomainError(ExprError):
    """Evaluation left the real domain (division by zero, log of a
    non-positive value, and so on)."""


# ---------------------------------------------------------------------------
# Syntax tree


@dataclass(frozen=True)
class Num:
    value: float

    def __repr__(self):
        return f"Num({self.value!r})"


@dataclass(frozen=True)
class Var:
    name: str

    def __repr__(self):
        return f"Var({self.name!r})"


@dataclass(frozen=True)
class Neg:
    child: "Expr"


@dataclass(frozen=True)
class Bin:
    op: str  # one of + - * / ^
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Fn:
    name: str
    arg: "Expr"


Expr = Union[Num, Var, Neg, Bin, Fn]
Env = Mapping[str, float]


# ---------------------------------------------------------------------------
# Parsing

_NUMBER = re.compile(r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_NAME = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")


class _Parser:
    def __init__(self, text):
        self.text = text
        self.pos = 0

    def fail(self, message, cls=ParseError):
        raise cls(message, self.text, self.pos)

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos] in " \t\r\n":
            self.pos += 1

    def peek(self):
        self.skip_ws()
        if self.pos < len(self.text):
            return self.text[self.pos]
        return ""

    def expect(self, ch):
        if self.peek() != ch:
            self.fail(f"expected {ch!r}")
        self.pos += 1

    def parse(self):
        node = self.expr()
        self.skip_ws()
        if self.pos != len(self.text):
            self.fail("unexpected trailing input")
        return node

    def expr(self):
        node = self.term()
        while True:
            ch = self.peek()
            if ch in ("+", "-"):
                self.pos += 1
                node = Bin(ch, node, self.term())
            else:
                return node

    def term(self):
        node = self.factor()
        while True:
            ch = self.peek()
            if ch in ("*", "/"):
                self.pos += 1
                node = Bin(ch, node, self.factor())
            else:
                return node

    def factor(self):
        if self.peek() == "-":
            self.pos += 1
            return Neg(self.factor())
        return self.power()

    def power(self):
        node = self.atom()
        if self.peek() == "^":
            self.pos += 1
            # right-associative: 2^3^2 == 2^(3^2)
            node = Bin("^", node, self.factor())
        return node

    def atom(self):
        ch = self.peek()
        if ch == "(":
            self.pos += 1
            node = self.expr()
            self.expect(")")
            return node
        m = _NUMBER.match(self.text, self.pos)
        if m:
            self.pos = m.end()
            return Num(float(m.group()))
        m = _NAME.match(self.text, self.pos)
        if m:
            name = m.group()
            if self.peek_ahead(m.end()) == "(":
                if name not in FUNCTIONS:
                    self.fail(f"unknown function {name!r}", UnknownFunctionError)
                self.pos = m.end()
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Fn(name, arg)
            self.pos = m.end()
            return Var(name)
        if ch == "":
            self.fail("unexpected end of input")
        self.fail(f"unexpected character {ch!r}")

    def peek_ahead(self, pos):
        while pos < len(self.text) and self.text[pos] in " \t\r\n":
            pos += 1
        if pos < len(self.text):
            return self.text[pos]
        return ""


def parse(text: str) -> Expr:
    """Parse expression text into a syntax tree."""
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# Evaluation


def evaluate(node: Expr, env: Env) -> float:
    """Evaluate ``node`` with names bound by ``env``.

    Raises UnboundNameError for names missing from ``env`` and DomainError
    whenever the result would leave the reals; NaN is never returned.
    """
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        try:
            return float(env[node.name])
        except KeyError:
            raise UnboundNameError(node.name) from None
    if isinstance(node, Neg):
        return -evaluate(node.child, env)
    if isinstance(node, Bin):
        a = evaluate(node.left, env)
        b = evaluate(node.right, env)
        return _apply_bin(node.op, a, b)
    if isinstance(node, Fn):
        return _apply_fn(node.name, evaluate(node.arg, env))
    raise TypeError(f"not an expression node: {node!r}")


def _apply_bin(op, a, b):
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if b == 0.0:
            raise DomainError("division by zero")
        return a / b
    if op == "^":
        return _apply_pow(a, b)
    raise TypeError(f"bad operator {op!r}")


def _apply_pow(a, b):
    if a == 0.0 and b < 0.0:
        raise DomainError("zero raised to a negative power")
    if a < 0.0 and not float(b).is_integer():
        raise DomainError("negative base with non-integer exponent")
    try:
        out = math.pow(a, b)
    except (ValueError, OverflowError) as e:
        raise DomainError(f"power failed: {e}") from None
    if not math.isfinite(out):
        raise DomainError("power overflowed")
    return out


def _apply_fn(name, x):
    if name == "sin":
        return math.sin(x)
    if name == "cos":
        return math.cos(x)
    if name == "tan":
        out = math.tan(x)
        if not math.isfinite(out):
            raise DomainError("tangent pole")
        return out
    if name == "exp":
        try:
            return math.exp(x)
        except OverflowError:
            raise DomainError("exp overflowed") from None
    if name == "log":
        if x <= 0.0:
            raise DomainError("log of a non-positive value")
        return math.log(x)
    if name == "sqrt":
        if x < 0.0:
            raise DomainError("sqrt of a negative value")
        return math.sqrt(x)
    if name == "abs":
        return abs(x)
    raise TypeError(f"bad function {name!r}")


# ---------------------------------------------------------------------------
# Differentiation

# Smart constructors drop obvious zero/one factors so derivative trees stay
# small enough to evaluate cheaply in inner loops.  No other simplification
# is attempted.


def _is_const(node, v):
    return isinstance(node, Num) and node.value == v


def _add(a, b):
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Bin("+", a, b)


def _sub(a, b):
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return Neg(b)
    return Bin("-", a, b)


def _mul(a, b):
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return Num(0.0)
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    return Bin("*", a, b)


def _div(a, b):
    if _is_const(a, 0.0):
        return Num(0.0)
    if _is_const(b, 1.0):
        return a
    return Bin("/", a, b)


def _neg(a):
    if _is_const(a, 0.0):
        return a
    return Neg(a)


def differentiate(node: Expr, name: str) -> Expr:
    """Symbolic partial derivative of ``node`` with respect to ``name``."""
    if isinstance(node, Num):
        return Num(0.0)
    if isinstance(node, Var):
        return Num(1.0) if node.name == name else Num(0.0)
    if isinstance(node, Neg):
        return _neg(differentiate(node.child, name))
    if isinstance(node, Bin):
        return _diff_bin(node, name)
    if isinstance(node, Fn):
        return _diff_fn(node, name)
    raise TypeError(f"not an expression node: {node!r}")


def _diff_bin(node, name):
    u, w = node.left, node.right
    du = differentiate(u, name)
    if node.op in "+-":
        return _add(du, differentiate(w, name)) if node.op == "+" else _sub(du, differentiate(w, name))
    if node.op == "*":
        return _add(_mul(du, w), _mul(u, differentiate(w, name)))
    if node.op == "/":
        dw = differentiate(w, name)
        num = _sub(_mul(du, w), _mul(u, dw))
        return _div(num, _mul(w, w))
    if node.op == "^":
        if name not in free_names(w):
            # power rule; stays valid for negative bases with integer exponents
            return _mul(_mul(w, Bin("^", u, _sub(w, Num(1.0)))), du)
        dw = differentiate(w, name)
        inner = _add(_mul(dw, Fn("log", u)), _mul(w, _div(du, u)))
        return _mul(node, inner)
    raise TypeError(f"bad operator {node.op!r}")


def _diff_fn(node, name):
    u = node.arg
    du = differentiate(u, name)
    f = node.name
    if f == "sin":
        return _mul(Fn("cos", u), du)
    if f == "cos":
        return _neg(_mul(Fn("sin", u), du))
    if f == "tan":
        c = Fn("cos", u)
        return _div(du, _mul(c, c))
    if f == "exp":
        return _mul(node, du)
    if f == "log":
        return _div(du, u)
    if f == "sqrt":
        return _div(du, _mul(Num(2.0), node))
    if f == "abs":
        # d|u| = sign(u) du; evaluation at u == 0 fails as division by zero
        return _mul(_div(u, node), du)
    raise TypeError(f"bad function {f!r}")


# ---------------------------------------------------------------------------
# Printing and inspection

_PREC_ADD = 1
_PREC_MUL = 2
_PREC_UNARY = 3
_PREC_POW = 4
_PREC_ATOM = 5


def to_text(node: Expr) -> str:
    """Render a tree back to text that reparses to an equivalent tree."""
    return _fmt(node, 0)


def _fmt(node, parent_prec):
    if isinstance(node, Num):
        v = node.value
        if v == int(v) and abs(v) < 1e16:
            out = repr(int(v))
        else:
            out = repr(v)
        return out
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        out = "-" + _fmt(node.child, _PREC_UNARY)
        return f"({out})" if parent_prec > _PREC_UNARY else out
    if isinstance(node, Fn):
        return f"{node.name}({_fmt(node.arg, 0)})"
    if isinstance(node, Bin):
        if node.op in "+-":
            prec = _PREC_ADD
            # right side of a-b binds one level tighter
            left = _fmt(node.left, prec)
            right = _fmt(node.right, prec + 1)
        elif node.op in "*/":
            prec = _PREC_MUL
            left = _fmt(node.left, prec)
            right = _fmt(node.right, prec + 1)
        else:  # ^ is right-associative with an atom on the left
            prec = _PREC_POW
            left = _fmt(node.left, _PREC_ATOM)
            right = _fmt(node.right, _PREC_UNARY)
        out = f"{left} {node.op} {right}"
        return f"({out})" if prec < parent_prec else out
    raise TypeError(f"not an expression node: {node!r}")


def free_names(node: Expr) -> frozenset:
    """All variable names occurring in ``node``."""
    if isinstance(node, Num):
        return frozenset()
    if isinstance(node, Var):
        return frozenset((node.name,))
    if isinstance(node, Neg):
        return free_names(node.child)
    if isinstance(node, Fn):
        return free_names(node.arg)
    if isinstance(node, Bin):
        return free_names(node.left) | free_names(node.right)
    raise TypeError(f"not an expression node: {node!r}")
