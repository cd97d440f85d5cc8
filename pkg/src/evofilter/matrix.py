"""Small dense matrix arithmetic.

Matrices are plain 2-D ``float64`` numpy arrays. Every function checks
shapes up front and the finiteness of its result, raising a
:class:`MatrixError` subclass instead of letting NaN or inf leak out.
"""

import numpy as np

from . import _kernels as k

PIVOT_TOL = 1e-12
LOG_FLOOR = 1e-8

UNARY_OPS = {
    "tanh": k.U_TANH,
    "sin": k.U_SIN,
    "cos": k.U_COS,
    "log": k.U_LOG,
    "exp": k.U_EXP,
    "abs": k.U_ABS,
    "square": k.U_SQUARE,
}


class MatrixError(ArithmeticError):
    """Base class for matrix-level failures."""


class ShapeError(MatrixError):
    pass


class SingularMatrixError(MatrixError):
    pass


class NonFiniteError(MatrixError):
    pass


def as_matrix(a):
    """Coerce ``a`` to a finite 2-D float64 array.

    Scalars become 1x1 and 1-D input becomes a column.
    """
    m = np.array(a, dtype=np.float64)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    elif m.ndim == 1:
        m = m.reshape(-1, 1)
    elif m.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got {m.ndim}")
    if m.size == 0:
        raise ShapeError("empty matrix")
    if not np.all(np.isfinite(m)):
        raise NonFiniteError("input contains non-finite entries")
    return np.ascontiguousarray(m)


def _checked(out, what):
    if not k.all_finite(out):
        raise NonFiniteError(f"{what} produced non-finite entries")
    return out


def _shape(a):
    return f"{a.shape[0]}x{a.shape[1]}"


def matmul(a, b):
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {_shape(a)} @ {_shape(b)}")
    out = np.empty((a.shape[0], b.shape[1]))
    k.matmul(a, b, out)
    return _checked(out, "matmul")


def broadcast_shape(a_shape, b_shape):
    """Result shape of ``add``/``sub``, or None when incompatible.

    Equal shapes combine entrywise; a column (r x 1) also combines with
    any r x c matrix by repeating across columns.
    """
    if a_shape == b_shape:
        return a_shape
    if a_shape[0] != b_shape[0]:
        return None
    if a_shape[1] == 1:
        return b_shape
    if b_shape[1] == 1:
        return a_shape
    return None


def _addsub(a, b, sign, name):
    shape = broadcast_shape(a.shape, b.shape)
    if shape is None:
        raise ShapeError(f"{name}: {_shape(a)} vs {_shape(b)}")
    out = np.empty(shape)
    k.add(a, b, out, sign)
    return _checked(out, name)


def add(a, b):
    return _addsub(a, b, 1.0, "add")


def sub(a, b):
    return _addsub(a, b, -1.0, "sub")


def invert(a, tol=PIVOT_TOL):
    """Inverse by pivoted Gauss-Jordan elimination.

    Raises SingularMatrixError when any pivot is smaller than ``tol``
    times the largest entry of its (original) row.
    """
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"invert: non-square {_shape(a)}")
    out = np.empty_like(a)
    n = a.shape[0]
    if not k.invert(a, out, tol, np.empty((n, n)), np.empty(n)):
        raise SingularMatrixError(f"invert: singular {_shape(a)} matrix")
    return _checked(out, "invert")


def transpose(a):
    out = np.empty((a.shape[1], a.shape[0]))
    k.transpose(a, out)
    return out


def elementwise(op, a, log_floor=LOG_FLOOR):
    """Apply a named unary function entrywise; ``log`` is floored at ``log_floor``."""
    try:
        code = UNARY_OPS[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    out = np.empty_like(a)
    k.unary(code, a, out, log_floor)
    return _checked(out, op)


def scale(a, s):
    out = np.empty_like(a)
    k.scalar_mul(a, float(s), out)
    return _checked(out, "scale")


def add_scalar(a, s):
    out = np.empty_like(a)
    k.add_scalar(a, float(s), out)
    return _checked(out, "add-scalar")


def max_scalar(a, s):
    out = np.empty_like(a)
    k.max_scalar(a, float(s), out)
    return _checked(out, "max-with-scalar")


def row_min(a):
    out = np.empty((a.shape[0], 1))
    k.row_min(a, out)
    return out


def mean_all(a):
    out = np.empty((1, 1))
    k.mean_all(a, out)
    return _checked(out, "mean")


def frobenius_norm(a):
    out = np.empty((1, 1))
    k.frobenius(a, out)
    return _checked(out, "norm")


def identity(n):
    if int(n) != n or n < 1:
        raise ValueError(f"identity size must be a positive integer, got {n}")
    return np.eye(int(n))
