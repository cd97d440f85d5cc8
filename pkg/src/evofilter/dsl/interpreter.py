"""Reference tree-walking interpreter.

Values are 2-D float arrays; numeric literals stay Python floats until
they meet a matrix. Literal/matrix mixing follows these rules:

* ``M + s``, ``s + M``, ``M - s``, ``s - M``: entrywise with the scalar.
* ``s * M``, ``s @ M``, ``M @ s``: scaling.
* ``A @ B`` where either side is 1x1: scaling by that entry (this
  coincides with the ordinary product whenever the latter is defined).
* ``A + B`` with an (r x 1) column against an (r x c) matrix: the column
  repeats across columns.

A statement whose value is a bare float binds a 1x1 matrix.
"""

from dataclasses import dataclass

import numpy as np

from .. import matrix as M
from .ast import UNARY_FUNCS, BinOp, Num, Ref
from .errors import EvalError


@dataclass(frozen=True)
class GuardConfig:
    pivot_tol: float = M.PIVOT_TOL
    log_floor: float = M.LOG_FLOOR
    max_ops: int = 100_000


DEFAULT_GUARDS = GuardConfig()

_KIND = {
    M.ShapeError: "shape-mismatch",
    M.SingularMatrixError: "singular",
    M.NonFiniteError: "non-finite",
}


class _StepLimit(Exception):
    pass


def _mat(v):
    return v if isinstance(v, np.ndarray) else np.full((1, 1), v)


def _finite_scalar(v):
    if not np.isfinite(v):
        raise M.NonFiniteError("scalar arithmetic overflowed")
    return v


def _binop(op, a, b):
    a_s = not isinstance(a, np.ndarray)
    b_s = not isinstance(b, np.ndarray)
    if op == "+":
        if a_s and b_s:
            return _finite_scalar(a + b)
        if a_s:
            return M.add_scalar(b, a)
        if b_s:
            return M.add_scalar(a, b)
        return M.add(a, b)
    if op == "-":
        if a_s and b_s:
            return _finite_scalar(a - b)
        if a_s:
            return M.add_scalar(M.scale(b, -1.0), a)
        if b_s:
            return M.add_scalar(a, -b)
        return M.sub(a, b)
    # "@" and "*"
    if a_s and b_s:
        return _finite_scalar(a * b)
    if a_s:
        return M.scale(b, a)
    if b_s:
        return M.scale(a, b)
    if a.shape == (1, 1):
        return M.scale(b, a[0, 0])
    if b.shape == (1, 1):
        return M.scale(a, b[0, 0])
    return M.matmul(a, b)


class _Eval:
    def __init__(self, guards):
        self.guards = guards
        self.ops = 0

    def __call__(self, e, values):
        self.ops += 1
        if self.ops > self.guards.max_ops:
            raise _StepLimit()
        if isinstance(e, Ref):
            return values[e.name]
        if isinstance(e, Num):
            return e.value
        if isinstance(e, BinOp):
            return _binop(e.op, self(e.left, values), self(e.right, values))
        return self.call(e, values)

    def call(self, e, values):
        f = e.func
        if f == "eye":
            return M.identity(e.args[0].value)
        a = _mat(self(e.args[0], values))
        if f == "inv":
            return M.invert(a, self.guards.pivot_tol)
        if f == "tr":
            return M.transpose(a)
        if f in UNARY_FUNCS:
            return M.elementwise(f, a, self.guards.log_floor)
        if f == "maxs":
            return M.max_scalar(a, e.args[1].value)
        if f == "rowmin":
            return M.row_min(a)
        if f == "mean":
            return M.mean_all(a)
        if f == "norm":
            return M.frobenius_norm(a)
        raise AssertionError(f"unhandled function {f}")


def interpret(program, env, guards=DEFAULT_GUARDS):
    """Run ``program`` once on ``env`` (input name -> matrix).

    Returns a dict of output name -> matrix. Any runtime failure raises
    :class:`EvalError` carrying the index of the failing statement.
    """
    values = {}
    for name in program.signature.inputs:
        if name not in env:
            raise ValueError(f"input {name!r} is not bound")
        values[name] = M.as_matrix(env[name])
    ev = _Eval(guards)
    for idx, st in enumerate(program.statements):
        try:
            values[st.target] = _mat(ev(st.expr, values))
        except _StepLimit:
            raise EvalError("step-limit", idx, f"more than {guards.max_ops} operations") from None
        except M.MatrixError as exc:
            raise EvalError(_KIND[type(exc)], idx, str(exc)) from None
    return {name: values[name] for name in program.signature.outputs}
