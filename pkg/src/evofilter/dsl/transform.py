"""Renaming passes over programs."""

from .ast import BinOp, Call, Program, Ref, Statement, generic_signature


def substitute(expr, names):
    """Return ``expr`` with every Ref renamed through ``names``."""
    if isinstance(expr, Ref):
        return Ref(names.get(expr.name, expr.name), expr.line, expr.col)
    if isinstance(expr, BinOp):
        return BinOp(expr.op, substitute(expr.left, names), substitute(expr.right, names))
    if isinstance(expr, Call):
        return Call(expr.func, tuple(substitute(a, names) for a in expr.args))
    return expr


def to_generic(program, name="f"):
    """Rewrite ``program`` with generic names and no reassignment.

    Inputs become ``i_k``, the final assignment of each output becomes
    ``o_k`` and every other assignment gets a fresh ``t_k``, so nothing
    of the original vocabulary survives. Inputs map positionally.
    """
    sig = program.signature
    gen = generic_signature(len(sig.inputs), len(sig.outputs))
    current = {n: g for n, g in zip(sig.inputs, gen.inputs)}
    last = {}
    for idx, st in enumerate(program.statements):
        last[st.target] = idx
    final = {last[n]: g for n, g in zip(sig.outputs, gen.outputs) if n in last}
    stmts = []
    temp = 0
    for idx, st in enumerate(program.statements):
        expr = substitute(st.expr, current)
        if idx in final:
            target = final[idx]
        else:
            temp += 1
            target = f"t_{temp}"
        current[st.target] = target
        stmts.append(Statement(target, expr, st.line, st.col))
    return Program(gen, tuple(stmts), name)
