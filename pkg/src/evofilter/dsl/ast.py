"""Syntax tree for matrix programs.

Nodes are frozen dataclasses. Source positions are carried for
diagnostics but excluded from equality, so two programs compare equal
exactly when they are structurally equal.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

GENERIC_INPUT = re.compile(r"i_[1-9][0-9]*\Z")
GENERIC_OUTPUT = re.compile(r"o_[1-9][0-9]*\Z")

# name -> number of arguments
UNARY_FUNCS = ("tanh", "sin", "cos", "log", "exp", "abs", "square")
FUNCTIONS = {
    **{name: 1 for name in UNARY_FUNCS},
    "inv": 1,
    "tr": 1,
    "maxs": 2,
    "rowmin": 1,
    "mean": 1,
    "norm": 1,
    "eye": 1,
}


@dataclass(frozen=True)
class Ref:
    name: str
    line: int = field(default=0, compare=False, repr=False)
    col: int = field(default=0, compare=False, repr=False)


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class BinOp:
    """``op`` is one of ``+``, ``-``, ``@`` or ``*`` (scalar literal times factor)."""

    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Expr = Ref | Num | BinOp | Call


@dataclass(frozen=True)
class Statement:
    target: str
    expr: Expr
    line: int = field(default=0, compare=False, repr=False)
    col: int = field(default=0, compare=False, repr=False)


@dataclass(frozen=True)
class Signature:
    inputs: tuple
    outputs: tuple
    anti_leak: bool = False

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        if not self.outputs:
            raise ValueError("signature needs at least one output")
        for names, kind in ((self.inputs, "input"), (self.outputs, "output")):
            if len(set(names)) != len(names):
                raise ValueError(f"duplicate {kind} names in {names}")
        if self.anti_leak and (
            self.inputs != _generic_names("i", len(self.inputs))
            or self.outputs != _generic_names("o", len(self.outputs))
        ):
            raise ValueError("anti-leak signatures must use i_1..i_n / o_1..o_m")

    def header(self, name="f"):
        return f"fn {name}({', '.join(self.inputs)}) -> ({', '.join(self.outputs)})"


def _generic_names(prefix, n):
    return tuple(f"{prefix}_{k + 1}" for k in range(n))


def generic_signature(n_in, n_out):
    return Signature(_generic_names("i", n_in), _generic_names("o", n_out), anti_leak=True)


@dataclass(frozen=True)
class Program:
    signature: Signature
    statements: tuple
    name: str = field(default="f", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "statements", tuple(self.statements))

    def __len__(self):
        return len(self.statements)


def walk(expr):
    """Yield every node of ``expr`` in pre-order."""
    yield expr
    if isinstance(expr, BinOp):
        yield from walk(expr.left)
        yield from walk(expr.right)
    elif isinstance(expr, Call):
        for a in expr.args:
            yield from walk(a)


def references(expr):
    return [n for n in walk(expr) if isinstance(n, Ref)]
