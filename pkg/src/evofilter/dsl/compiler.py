"""Compile programs to a flat register tape and run it with numba.

The tape VM mirrors :func:`evofilter.dsl.interpreter.interpret` operation
for operation (same arithmetic, same evaluation order), so both paths
give bit-identical values. Shapes are static, so shape errors surface at
compile time instead of on the first step.
"""

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .. import _kernels as k
from .. import matrix as M
from .ast import UNARY_FUNCS, BinOp, Num, Ref
from .errors import EvalError
from .interpreter import DEFAULT_GUARDS

OP_COPY = 0
OP_ADD = 1
OP_SUB = 2
OP_MATMUL = 3
OP_SCALE_REG = 4
OP_INV = 5
OP_TR = 6
OP_SCALE = 7
OP_ADDS = 8
OP_RSUBS = 9
OP_MAXS = 10
OP_UNARY = 11  # + unary code (0..6)
OP_ROWMIN = 18
OP_MEAN = 19
OP_NORM = 20

UNARY_CODE = {name: M.UNARY_OPS[name] for name in UNARY_FUNCS}

ST_OK = 0
ST_SINGULAR = 1
ST_NONFINITE = 2
STATUS_KIND = {ST_SINGULAR: "singular", ST_NONFINITE: "non-finite"}


@dataclass
class Tape:
    code: np.ndarray  # (n, 4) int64: op, dst, a, b
    scal: np.ndarray  # (n,) float64
    stmt: np.ndarray  # (n,) statement index per instruction
    rows: np.ndarray
    cols: np.ndarray
    regs0: np.ndarray  # (nregs, maxr, maxc) initial register file

    def fresh_registers(self):
        return self.regs0.copy()


class TapeBuilder:
    """Incrementally lowers statements into tape instructions.

    ``env`` maps names to register indices. Compile-time literals are
    carried as Python floats and folded.
    """

    def __init__(self, guards=DEFAULT_GUARDS):
        self.guards = guards
        self.code = []
        self.scal = []
        self.stmt = []
        self.shapes = []
        self.init = {}
        self.ops = 0
        self._stmt = -1

    def register(self, shape, value=None):
        self.shapes.append(tuple(shape))
        idx = len(self.shapes) - 1
        if value is not None:
            self.init[idx] = np.asarray(value, dtype=np.float64)
        return idx

    def shape(self, reg):
        return self.shapes[reg]

    def emit(self, op, shape, a=0, b=0, s=0.0):
        d = self.register(shape)
        self.code.append((op, d, a, b))
        self.scal.append(s)
        self.stmt.append(self._stmt)
        return d

    def const(self, value):
        v = M.as_matrix(value)
        return self.register(v.shape, v)

    def _fail(self, kind, message):
        raise EvalError(kind, self._stmt, message)

    def _reg(self, v):
        return self.const(v) if isinstance(v, float) else v

    def expr(self, e, env):
        self.ops += 1
        if self.ops > self.guards.max_ops:
            self._fail("step-limit", f"more than {self.guards.max_ops} operations")
        if isinstance(e, Ref):
            return env[e.name]
        if isinstance(e, Num):
            return e.value
        if isinstance(e, BinOp):
            return self.binop(e.op, self.expr(e.left, env), self.expr(e.right, env))
        return self.call(e, env)

    def binop(self, op, a, b):
        a_s = isinstance(a, float)
        b_s = isinstance(b, float)
        if a_s and b_s:
            v = {"+": a + b, "-": a - b}.get(op, a * b)
            if not np.isfinite(v):
                self._fail("non-finite", "scalar arithmetic overflowed")
            return v
        if op == "+":
            if a_s:
                return self.emit(OP_ADDS, self.shape(b), b, s=a)
            if b_s:
                return self.emit(OP_ADDS, self.shape(a), a, s=b)
            return self.addsub(OP_ADD, a, b, "add")
        if op == "-":
            if a_s:
                return self.emit(OP_RSUBS, self.shape(b), b, s=a)
            if b_s:
                return self.emit(OP_ADDS, self.shape(a), a, s=-b)
            return self.addsub(OP_SUB, a, b, "sub")
        if a_s:
            return self.emit(OP_SCALE, self.shape(b), b, s=a)
        if b_s:
            return self.emit(OP_SCALE, self.shape(a), a, s=b)
        sa, sb = self.shape(a), self.shape(b)
        if sa == (1, 1):
            return self.emit(OP_SCALE_REG, sb, b, a)
        if sb == (1, 1):
            return self.emit(OP_SCALE_REG, sa, a, b)
        if sa[1] != sb[0]:
            self._fail("shape-mismatch", f"matmul: {sa[0]}x{sa[1]} @ {sb[0]}x{sb[1]}")
        return self.emit(OP_MATMUL, (sa[0], sb[1]), a, b)

    def inv(self, a):
        r, c = self.shape(a)
        if r != c:
            self._fail("shape-mismatch", f"invert: non-square {r}x{c}")
        return self.emit(OP_INV, (r, c), a)

    def tr(self, a):
        r, c = self.shape(a)
        return self.emit(OP_TR, (c, r), a)

    def addsub(self, op, a, b, name):
        sa, sb = self.shape(a), self.shape(b)
        shape = M.broadcast_shape(sa, sb)
        if shape is None:
            self._fail("shape-mismatch", f"{name}: {sa[0]}x{sa[1]} vs {sb[0]}x{sb[1]}")
        return self.emit(op, shape, a, b)

    def call(self, e, env):
        f = e.func
        if f == "eye":
            return self.const(M.identity(e.args[0].value))
        a = self._reg(self.expr(e.args[0], env))
        r, c = self.shape(a)
        if f == "inv":
            return self.inv(a)
        if f == "tr":
            return self.tr(a)
        if f in UNARY_CODE:
            return self.emit(OP_UNARY + UNARY_CODE[f], (r, c), a)
        if f == "maxs":
            return self.emit(OP_MAXS, (r, c), a, s=e.args[1].value)
        if f == "rowmin":
            return self.emit(OP_ROWMIN, (r, 1), a)
        if f == "mean":
            return self.emit(OP_MEAN, (1, 1), a)
        if f == "norm":
            return self.emit(OP_NORM, (1, 1), a)
        raise AssertionError(f"unhandled function {f}")

    def statements(self, stmts, env, index_offset=0, tag_statements=True):
        """Lower ``stmts`` in order, updating ``env`` in place."""
        for idx, st in enumerate(stmts):
            self._stmt = idx + index_offset if tag_statements else -1
            v = self.expr(st.expr, env)
            env[st.target] = self._reg(v)
        self._stmt = -1
        return env

    def copy_into(self, dst, src):
        """Emit a copy into an existing register (for loop-carried state)."""
        if self.shape(dst) != self.shape(src):
            self._fail("shape-mismatch", "feedback shape changed between steps")
        self.code.append((OP_COPY, dst, src, 0))
        self.scal.append(0.0)
        self.stmt.append(self._stmt)

    def build(self):
        n = len(self.shapes)
        rows = np.array([s[0] for s in self.shapes], dtype=np.int64)
        cols = np.array([s[1] for s in self.shapes], dtype=np.int64)
        regs = np.zeros((n, max(rows.max(initial=1), 1), max(cols.max(initial=1), 1)))
        for idx, v in self.init.items():
            regs[idx, : v.shape[0], : v.shape[1]] = v
        code = np.array(self.code, dtype=np.int64).reshape(-1, 4)
        return Tape(
            code,
            np.array(self.scal, dtype=np.float64),
            np.array(self.stmt, dtype=np.int64),
            rows,
            cols,
            regs,
        )


@njit(cache=True)
def _invert(regs, a, d, n, tol, m, scale):
    # same elimination order as evofilter._kernels.invert
    for i in range(n):
        big = 0.0
        for j in range(n):
            m[i, j] = regs[a, i, j]
            regs[d, i, j] = 1.0 if i == j else 0.0
            v = abs(m[i, j])
            if v > big:
                big = v
        if big == 0.0:
            return False
        scale[i] = big
    for q in range(n):
        p = q
        best = abs(m[q, q])
        for i in range(q + 1, n):
            v = abs(m[i, q])
            if v > best:
                best = v
                p = i
        if best < tol * scale[p] or best == 0.0:
            return False
        if p != q:
            for j in range(n):
                t = m[q, j]
                m[q, j] = m[p, j]
                m[p, j] = t
                t = regs[d, q, j]
                regs[d, q, j] = regs[d, p, j]
                regs[d, p, j] = t
            t = scale[q]
            scale[q] = scale[p]
            scale[p] = t
        piv = m[q, q]
        for j in range(n):
            m[q, j] /= piv
            regs[d, q, j] /= piv
        for i in range(n):
            if i != q:
                f = m[i, q]
                if f != 0.0:
                    for j in range(n):
                        m[i, j] -= f * m[q, j]
                        regs[d, i, j] -= f * regs[d, q, j]
    return True


@njit(cache=True)
def _exec(code, scal, rows, cols, regs, pivot_tol, log_floor, work, scale):
    # Loops mirror evofilter._kernels element for element.
    for pc in range(code.shape[0]):
        op = code[pc, 0]
        d = code[pc, 1]
        a = code[pc, 2]
        b = code[pc, 3]
        R = rows[d]
        C = cols[d]
        if op == OP_COPY:
            for i in range(R):
                for j in range(C):
                    regs[d, i, j] = regs[a, i, j]
            continue
        elif op == OP_TR:
            for i in range(R):
                for j in range(C):
                    regs[d, i, j] = regs[a, j, i]
            continue
        elif op == OP_ROWMIN:
            for i in range(R):
                m = regs[a, i, 0]
                for j in range(1, cols[a]):
                    if regs[a, i, j] < m:
                        m = regs[a, i, j]
                regs[d, i, 0] = m
            continue
        elif op == OP_MATMUL:
            inner = cols[a]
            for i in range(R):
                for j in range(C):
                    s = 0.0
                    for q in range(inner):
                        s += regs[a, i, q] * regs[b, q, j]
                    regs[d, i, j] = s
        elif op == OP_ADD or op == OP_SUB:
            sign = 1.0 if op == OP_ADD else -1.0
            ca = cols[a]
            cb = cols[b]
            for i in range(R):
                for j in range(C):
                    ja = 0 if ca == 1 else j
                    jb = 0 if cb == 1 else j
                    regs[d, i, j] = regs[a, i, ja] + sign * regs[b, i, jb]
        elif op == OP_SCALE_REG or op == OP_SCALE:
            s = regs[b, 0, 0] if op == OP_SCALE_REG else scal[pc]
            for i in range(R):
                for j in range(C):
                    regs[d, i, j] = s * regs[a, i, j]
        elif op == OP_ADDS:
            s = scal[pc]
            for i in range(R):
                for j in range(C):
                    regs[d, i, j] = regs[a, i, j] + s
        elif op == OP_RSUBS:
            s = scal[pc]
            for i in range(R):
                for j in range(C):
                    regs[d, i, j] = s - regs[a, i, j]
        elif op == OP_MAXS:
            s = scal[pc]
            for i in range(R):
                for j in range(C):
                    v = regs[a, i, j]
                    regs[d, i, j] = v if v > s else s
        elif op == OP_INV:
            if not _invert(regs, a, d, R, pivot_tol, work, scale):
                return ST_SINGULAR, pc
        elif op == OP_MEAN or op == OP_NORM:
            s = 0.0
            for i in range(rows[a]):
                for j in range(cols[a]):
                    v = regs[a, i, j]
                    s += v if op == OP_MEAN else v * v
            regs[d, 0, 0] = s / (rows[a] * cols[a]) if op == OP_MEAN else math.sqrt(s)
        else:
            u = op - OP_UNARY
            for i in range(R):
                for j in range(C):
                    v = regs[a, i, j]
                    if u == k.U_TANH:
                        w = math.tanh(v)
                    elif u == k.U_SIN:
                        w = math.sin(v)
                    elif u == k.U_COS:
                        w = math.cos(v)
                    elif u == k.U_LOG:
                        w = math.log(max(v, log_floor))
                    elif u == k.U_EXP:
                        w = math.exp(v)
                    elif u == k.U_ABS:
                        w = abs(v)
                    else:
                        w = v * v
                    regs[d, i, j] = w
        for i in range(R):
            for j in range(C):
                if not math.isfinite(regs[d, i, j]):
                    return ST_NONFINITE, pc
    return ST_OK, -1


@njit(cache=True)
def _run_steps(code, scal, rows, cols, regs, z_reg, obs, est_reg, est_out, pivot_tol, log_floor):
    T = obs.shape[0]
    n = max(regs.shape[1], regs.shape[2])
    work = np.empty((n, n))
    scale = np.empty(n)
    for t in range(T):
        if z_reg >= 0:
            for i in range(obs.shape[1]):
                regs[z_reg, i, 0] = obs[t, i]
        status, pc = _exec(code, scal, rows, cols, regs, pivot_tol, log_floor, work, scale)
        if status != ST_OK:
            return status, pc, t
        if est_reg >= 0:
            for i in range(est_out.shape[1]):
                est_out[t, i] = regs[est_reg, i, 0]
    return ST_OK, -1, T


@njit(cache=True)
def _run_batch(code, scal, rows, cols, regs0, z_reg, obs, est_reg, est_out, pivot_tol, log_floor):
    for i in range(obs.shape[0]):
        regs = regs0.copy()
        status, pc, t = _run_steps(
            code, scal, rows, cols, regs, z_reg, obs[i], est_reg, est_out[i], pivot_tol, log_floor
        )
        if status != ST_OK:
            return status, pc, i, t
    return ST_OK, -1, obs.shape[0], 0


def run_batch(tape, observations, z_reg, est_reg, guards=DEFAULT_GUARDS):
    """Run every trajectory of ``observations`` (N, T, m) from ``regs0``.

    Returns estimates of shape (N, T, n). On failure raises EvalError
    whose message names the trajectory and step.
    """
    observations = np.ascontiguousarray(observations, dtype=np.float64)
    n, T = observations.shape[:2]
    est = np.empty((n, T, int(tape.rows[est_reg])))
    status, pc, i, t = _run_batch(
        tape.code,
        tape.scal,
        tape.rows,
        tape.cols,
        tape.regs0,
        z_reg,
        observations,
        est_reg,
        est,
        guards.pivot_tol,
        guards.log_floor,
    )
    if status != ST_OK:
        raise EvalError(STATUS_KIND[status], int(tape.stmt[pc]), f"trajectory {i}, step {t}")
    return est


def run(tape, regs, observations=None, z_reg=-1, est_reg=-1, guards=DEFAULT_GUARDS):
    """Execute ``tape`` once per observation row.

    ``regs`` is mutated in place. Returns the (T, n) array of values read
    from ``est_reg`` after every step. Raises EvalError on failure.
    """
    if observations is None:
        observations = np.zeros((1, 1))
    observations = np.ascontiguousarray(observations, dtype=np.float64)
    n_est = int(tape.rows[est_reg]) if est_reg >= 0 else 1
    est = np.empty((observations.shape[0], n_est))
    status, pc, t = _run_steps(
        tape.code,
        tape.scal,
        tape.rows,
        tape.cols,
        regs,
        z_reg,
        observations,
        est_reg,
        est,
        guards.pivot_tol,
        guards.log_floor,
    )
    if status != ST_OK:
        raise EvalError(STATUS_KIND[status], int(tape.stmt[pc]), f"at step {t}")
    return est


def compile_program(program, shapes, guards=DEFAULT_GUARDS):
    """Lower ``program`` with inputs of the given shapes.

    Returns ``(tape, input_regs, output_regs)``.
    """
    b = TapeBuilder(guards)
    env = {name: b.register(shapes[name]) for name in program.signature.inputs}
    inputs = dict(env)
    b.statements(program.statements, env)
    outputs = {name: env[name] for name in program.signature.outputs}
    return b.build(), inputs, outputs


def execute(program, env, guards=DEFAULT_GUARDS):
    """Compiled counterpart of :func:`interpret` for a single evaluation."""
    values = {name: M.as_matrix(env[name]) for name in program.signature.inputs}
    tape, inputs, outputs = compile_program(
        program, {n: v.shape for n, v in values.items()}, guards
    )
    regs = tape.fresh_registers()
    for name, reg in inputs.items():
        v = values[name]
        regs[reg, : v.shape[0], : v.shape[1]] = v
    run(tape, regs, guards=guards)
    return {
        name: regs[reg, : tape.rows[reg], : tape.cols[reg]].copy()
        for name, reg in outputs.items()
    }
