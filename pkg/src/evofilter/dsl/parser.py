"""Recursive-descent parser for matrix programs.

Grammar::

    program := "fn" IDENT "(" idents ")" "->" "(" idents ")" "{" stmt* "}"
    stmt    := IDENT "=" expr [";"]
    expr    := expr ("+" | "-") term | term
    term    := term "@" factor | factor
    factor  := IDENT | NUMBER | NUMBER "*" factor | FNAME "(" args ")" | "(" expr ")"

A bare statement list (no ``fn`` header) is accepted too; its signature
is then taken from the caller or inferred from ``i_k``/``o_k`` names.
``#`` starts a comment that runs to the end of the line.
"""

import math
import re

from .ast import (
    FUNCTIONS,
    GENERIC_INPUT,
    GENERIC_OUTPUT,
    BinOp,
    Call,
    Num,
    Program,
    Ref,
    Signature,
    Statement,
    references,
)
from .errors import ArityError, DslSyntaxError, ScopeError, UnknownFunctionError

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+|\#[^\n]*)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<arrow>->)
  | (?P<op>[-+@*=(){},;])
    """,
    re.VERBOSE,
)

MAX_IDENTITY = 16
MAX_DEPTH = 100  # nesting limit for parentheses, calls and literal products


class _Tok:
    __slots__ = ("kind", "text", "line", "col")

    def __init__(self, kind, text, line, col):
        self.kind = kind
        self.text = text
        self.line = line
        self.col = col

    def __repr__(self):
        return f"{self.kind}:{self.text!r}@{self.line}:{self.col}"


def tokenize(text):
    toks = []
    pos = 0
    line = 1
    line_start = 0
    n = len(text)
    while pos < n:
        m = _TOKEN.match(text, pos)
        if m is None:
            raise DslSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        s = m.group()
        if kind != "ws":
            toks.append(_Tok(kind if kind != "arrow" else "op", s, line, pos - line_start + 1))
        nl = s.count("\n")
        if nl:
            line += nl
            line_start = pos + s.rfind("\n") + 1
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text):
        self.toks = tokenize(text)
        self.i = 0
        self.depth = 0

    @property
    def tok(self):
        return self.toks[self.i]

    def peek(self, offset=1):
        j = min(self.i + offset, len(self.toks) - 1)
        return self.toks[j]

    def advance(self):
        t = self.toks[self.i]
        if t.kind != "eof":
            self.i += 1
        return t

    def error(self, message, tok=None):
        tok = tok or self.tok
        return DslSyntaxError(message, tok.line, tok.col)

    def expect(self, text):
        t = self.tok
        if t.text != text or t.kind not in ("op", "ident"):
            found = t.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")
        return self.advance()

    def expect_ident(self):
        t = self.tok
        if t.kind != "ident":
            raise self.error(f"expected identifier, found {t.text or 'end of input'!r}")
        return self.advance()

    def at(self, text):
        return self.tok.kind == "op" and self.tok.text == text

    # program structure

    def program(self):
        if self.tok.kind == "ident" and self.tok.text == "fn":
            self.advance()
            name = self.expect_ident().text
            self.expect("(")
            inputs = self.idents(")")
            self.expect(")")
            self.expect("->")
            self.expect("(")
            outputs = self.idents(")")
            self.expect(")")
            self.expect("{")
            stmts = self.statements(closing="}")
            self.expect("}")
            if self.tok.kind != "eof":
                raise self.error("unexpected text after program body")
            return name, (inputs, outputs), stmts
        stmts = self.statements(closing=None)
        return None, None, stmts

    def idents(self, closing):
        names = []
        if self.at(closing):
            return names
        while True:
            names.append(self.expect_ident().text)
            if not self.at(","):
                return names
            self.advance()

    def statements(self, closing):
        stmts = []
        while True:
            if self.tok.kind == "eof" or (closing and self.at(closing)):
                return stmts
            if self.at(";"):
                self.advance()
                continue
            t = self.expect_ident()
            if t.text == "fn":
                raise self.error("'fn' is reserved", t)
            self.expect("=")
            expr = self.expr()
            stmts.append(Statement(t.text, expr, t.line, t.col))

    # expressions

    def expr(self):
        left = self.term()
        while self.at("+") or self.at("-"):
            op = self.advance().text
            left = BinOp(op, left, self.term())
        return left

    def term(self):
        left = self.factor()
        while self.at("@"):
            self.advance()
            left = BinOp("@", left, self.factor())
        return left

    def number(self):
        neg = False
        if self.at("-"):
            self.advance()
            neg = True
        t = self.tok
        if t.kind != "num":
            raise self.error(f"expected number, found {t.text or 'end of input'!r}")
        self.advance()
        v = float(t.text)
        if not math.isfinite(v):
            raise self.error(f"number {t.text!r} is not finite", t)
        return Num(-v if neg else v)

    def factor(self):
        self.depth += 1
        if self.depth > MAX_DEPTH:
            raise self.error(f"expression nested deeper than {MAX_DEPTH} levels")
        try:
            return self._factor()
        finally:
            self.depth -= 1

    def _factor(self):
        t = self.tok
        if t.kind == "num" or (self.at("-") and self.peek().kind == "num"):
            num = self.number()
            if self.at("*"):
                self.advance()
                return BinOp("*", num, self.factor())
            return num
        if t.kind == "ident":
            if self.peek().kind == "op" and self.peek().text == "(":
                return self.call()
            self.advance()
            return Ref(t.text, t.line, t.col)
        if self.at("("):
            self.advance()
            e = self.expr()
            self.expect(")")
            return e
        raise self.error(f"unexpected {t.text or 'end of input'!r}")

    def call(self):
        t = self.advance()
        name = t.text
        if name not in FUNCTIONS:
            raise UnknownFunctionError(f"unknown function {name!r}", t.line, t.col)
        self.expect("(")
        args = []
        if not self.at(")"):
            while True:
                args.append(self.expr())
                if not self.at(","):
                    break
                self.advance()
        self.expect(")")
        want = FUNCTIONS[name]
        if len(args) != want:
            raise ArityError(f"{name} takes {want} argument(s), got {len(args)}", t.line, t.col)
        if name == "maxs" and not isinstance(args[1], Num):
            raise ArityError("maxs expects (expr, NUMBER)", t.line, t.col)
        if name == "eye":
            a = args[0]
            if not (isinstance(a, Num) and a.value.is_integer() and 1 <= a.value <= MAX_IDENTITY):
                raise ArityError(f"eye expects an integer size in 1..{MAX_IDENTITY}", t.line, t.col)
        return Call(name, tuple(args))


def _infer_signature(stmts):
    defined = set()
    inputs = set()
    outputs = set()
    for st in stmts:
        for ref in references(st.expr):
            if ref.name in defined:
                continue
            if GENERIC_INPUT.match(ref.name):
                inputs.add(int(ref.name[2:]))
            else:
                raise ScopeError(f"{ref.name!r} used before assignment", ref.line, ref.col)
        defined.add(st.target)
        if GENERIC_OUTPUT.match(st.target):
            outputs.add(int(st.target[2:]))
    if not outputs:
        raise DslSyntaxError("cannot infer outputs: no o_k name is assigned")
    n_in = max(inputs, default=0)
    return Signature(
        tuple(f"i_{k}" for k in range(1, n_in + 1)),
        tuple(f"o_{k}" for k in range(1, max(outputs) + 1)),
        anti_leak=True,
    )


def check_scope(signature, stmts):
    """Raise ScopeError on the first reference to a name not yet bound."""
    defined = set(signature.inputs)
    for st in stmts:
        for ref in references(st.expr):
            if ref.name not in defined:
                raise ScopeError(f"{ref.name!r} used before assignment", ref.line, ref.col)
        defined.add(st.target)


def _is_generic(inputs, outputs):
    return tuple(inputs) == tuple(f"i_{k + 1}" for k in range(len(inputs))) and tuple(
        outputs
    ) == tuple(f"o_{k + 1}" for k in range(len(outputs)))


def parse(text, signature=None, name="f"):
    """Parse program text into a :class:`Program`.

    Raises DslSyntaxError, ScopeError, UnknownFunctionError or ArityError.
    """
    p = _Parser(text)
    header_name, header, stmts = p.program()
    if header is not None:
        inputs, outputs = header
        try:
            sig = Signature(inputs, outputs, anti_leak=_is_generic(inputs, outputs))
        except ValueError as exc:
            raise DslSyntaxError(str(exc), 1, 1) from None
        name = header_name
    elif signature is not None:
        sig = signature
    else:
        sig = _infer_signature(stmts)
    check_scope(sig, stmts)
    return Program(sig, tuple(stmts), name)
