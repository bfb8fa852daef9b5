"""Flat instruction tapes for fast repeated evaluation of expressions.

Both numeric cores (the compiled extension and the pure-Python fallback)
consume the same tape format, so a tape compiled once can drive either.
Constants are folded into immediates at compile time; coordinates are read
from a slot vector at evaluation time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..expr import Bin, DomainError, Fn, Neg, Num, UnboundNameError, Var

OP_CONST = 0
OP_VAR = 1
OP_NEG = 2
OP_ADD = 3
OP_SUB = 4
OP_MUL = 5
OP_DIV = 6
OP_POW = 7
OP_SIN = 8
OP_COS = 9
OP_TAN = 10
OP_EXP = 11
OP_LOG = 12
OP_SQRT = 13
OP_ABS = 14

_FN_OPS = {
    "sin": OP_SIN,
    "cos": OP_COS,
    "tan": OP_TAN,
    "exp": OP_EXP,
    "log": OP_LOG,
    "sqrt": OP_SQRT,
    "abs": OP_ABS,
}

_BIN_OPS = {"+": OP_ADD, "-": OP_SUB, "*": OP_MUL, "/": OP_DIV, "^": OP_POW}

MAX_STACK = 64


class CoreError(Exception):
    """Base class for numeric-core failures."""


class CoreSingularError(CoreError):
    """A linear system lost rank (pivot below threshold)."""


class CoreDomainError(CoreError):
    """An expression left its real domain during evaluation."""


class CoreNonFiniteError(CoreError):
    """A quadrature sample came back non-finite."""


class CoreConvergenceError(CoreError):
    """Adaptive quadrature hit its subdivision budget."""


@dataclass(eq=False)
class Tape:
    ops: np.ndarray  # int32
    iarg: np.ndarray  # int32 slot index, used by OP_VAR
    farg: np.ndarray  # float64 immediate, used by OP_CONST
    max_stack: int
    n_slots: int


def compile_tape(node, slots, consts) -> Tape:
    """Flatten an expression tree into postfix instructions.

    ``slots`` maps coordinate names to vector indices; ``consts`` maps the
    remaining names to fixed values folded in as immediates.
    """
    ops, iarg, farg = [], [], []

    def emit(op, i=0, f=0.0):
        ops.append(op)
        iarg.append(i)
        farg.append(f)

    def walk(e):
        if isinstance(e, Num):
            emit(OP_CONST, f=e.value)
        elif isinstance(e, Var):
            if e.name in slots:
                emit(OP_VAR, i=slots[e.name])
            elif e.name in consts:
                emit(OP_CONST, f=float(consts[e.name]))
            else:
                raise UnboundNameError(e.name)
        elif isinstance(e, Neg):
            walk(e.child)
            emit(OP_NEG)
        elif isinstance(e, Bin):
            walk(e.left)
            walk(e.right)
            emit(_BIN_OPS[e.op])
        elif isinstance(e, Fn):
            walk(e.arg)
            emit(_FN_OPS[e.name])
        else:
            raise TypeError(f"not an expression node: {e!r}")

    walk(node)

    depth = 0
    peak = 0
    for op in ops:
        if op in (OP_CONST, OP_VAR):
            depth += 1
        elif op in (OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_POW):
            depth -= 1
        peak = max(peak, depth)
    if peak > MAX_STACK:
        raise DomainError(f"expression too deep for the evaluation stack ({peak} > {MAX_STACK})")

    return Tape(
        ops=np.asarray(ops, dtype=np.int32),
        iarg=np.asarray(iarg, dtype=np.int32),
        farg=np.asarray(farg, dtype=np.float64),
        max_stack=peak,
        n_slots=len(slots),
    )
