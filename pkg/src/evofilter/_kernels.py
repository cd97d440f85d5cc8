"""Low-level numba kernels behind :mod:`evofilter.matrix`.

Every kernel writes into a caller-provided ``out`` array. The tape VM in
:mod:`evofilter.dsl.compiler` runs the same loops directly on its
register file in the same operation order, so results agree bit for bit.
"""

import math

from numba import njit

# unary elementwise codes
U_TANH = 0
U_SIN = 1
U_COS = 2
U_LOG = 3
U_EXP = 4
U_ABS = 5
U_SQUARE = 6


@njit(cache=True)
def matmul(a, b, out):
    n, m = a.shape
    p = b.shape[1]
    for i in range(n):
        for j in range(p):
            s = 0.0
            for k in range(m):
                s += a[i, k] * b[k, j]
            out[i, j] = s


@njit(cache=True)
def scalar_mul(a, s, out):
    r, c = a.shape
    for i in range(r):
        for j in range(c):
            out[i, j] = s * a[i, j]


@njit(cache=True)
def add(a, b, out, sign):
    # (r, 1) operands repeat across columns
    r, c = out.shape
    ca = a.shape[1]
    cb = b.shape[1]
    for i in range(r):
        for j in range(c):
            ja = 0 if ca == 1 else j
            jb = 0 if cb == 1 else j
            out[i, j] = a[i, ja] + sign * b[i, jb]


@njit(cache=True)
def transpose(a, out):
    r, c = a.shape
    for i in range(r):
        for j in range(c):
            out[j, i] = a[i, j]


@njit(cache=True)
def copy(a, out):
    r, c = a.shape
    for i in range(r):
        for j in range(c):
            out[i, j] = a[i, j]


@njit(cache=True)
def invert(a, out, tol, m, scale):
    """Gauss-Jordan inversion with partial pivoting.

    ``m`` (at least n x n) and ``scale`` (at least n) are scratch space.
    Returns False (leaving ``out`` unspecified) when a pivot falls below
    ``tol`` times the largest magnitude in its original row.
    """
    n = a.shape[0]
    for i in range(n):
        big = 0.0
        for j in range(n):
            m[i, j] = a[i, j]
            out[i, j] = 1.0 if i == j else 0.0
            v = abs(a[i, j])
            if v > big:
                big = v
        if big == 0.0:
            return False
        scale[i] = big
    for k in range(n):
        p = k
        best = abs(m[k, k])
        for i in range(k + 1, n):
            v = abs(m[i, k])
            if v > best:
                best = v
                p = i
        if best < tol * scale[p] or best == 0.0:
            return False
        if p != k:
            for j in range(n):
                t = m[k, j]
                m[k, j] = m[p, j]
                m[p, j] = t
                t = out[k, j]
                out[k, j] = out[p, j]
                out[p, j] = t
            t = scale[k]
            scale[k] = scale[p]
            scale[p] = t
        piv = m[k, k]
        for j in range(n):
            m[k, j] /= piv
            out[k, j] /= piv
        for i in range(n):
            if i != k:
                f = m[i, k]
                if f != 0.0:
                    for j in range(n):
                        m[i, j] -= f * m[k, j]
                        out[i, j] -= f * out[k, j]
    return True


@njit(cache=True)
def unary(code, a, out, log_floor):
    r, c = a.shape
    for i in range(r):
        for j in range(c):
            v = a[i, j]
            if code == U_TANH:
                w = math.tanh(v)
            elif code == U_SIN:
                w = math.sin(v)
            elif code == U_COS:
                w = math.cos(v)
            elif code == U_LOG:
                w = math.log(max(v, log_floor))
            elif code == U_EXP:
                w = math.exp(v)
            elif code == U_ABS:
                w = abs(v)
            else:
                w = v * v
            out[i, j] = w


@njit(cache=True)
def add_scalar(a, s, out):
    r, c = a.shape
    for i in range(r):
        for j in range(c):
            out[i, j] = a[i, j] + s


@njit(cache=True)
def rsub_scalar(a, s, out):
    r, c = a.shape
    for i in range(r):
        for j in range(c):
            out[i, j] = s - a[i, j]


@njit(cache=True)
def max_scalar(a, s, out):
    r, c = a.shape
    for i in range(r):
        for j in range(c):
            out[i, j] = a[i, j] if a[i, j] > s else s


@njit(cache=True)
def row_min(a, out):
    r, c = a.shape
    for i in range(r):
        m = a[i, 0]
        for j in range(1, c):
            if a[i, j] < m:
                m = a[i, j]
        out[i, 0] = m


@njit(cache=True)
def mean_all(a, out):
    r, c = a.shape
    s = 0.0
    for i in range(r):
        for j in range(c):
            s += a[i, j]
    out[0, 0] = s / (r * c)


@njit(cache=True)
def frobenius(a, out):
    r, c = a.shape
    s = 0.0
    for i in range(r):
        for j in range(c):
            s += a[i, j] * a[i, j]
    out[0, 0] = math.sqrt(s)


@njit(cache=True)
def all_finite(a):
    r, c = a.shape
    for i in range(r):
        for j in range(c):
            if not math.isfinite(a[i, j]):
                return False
    return True
