"""Canonical text form of programs.

``parse(to_text(p)) == p`` for every valid program, and structurally
equal programs print identically.
"""

from .ast import BinOp, Call, Num, Ref


def format_number(v):
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _factor(e):
    s = expr_text(e)
    if isinstance(e, BinOp) and e.op != "*":
        return f"({s})"
    return s


def expr_text(e):
    if isinstance(e, Ref):
        return e.name
    if isinstance(e, Num):
        return format_number(e.value)
    if isinstance(e, Call):
        return f"{e.func}({', '.join(expr_text(a) for a in e.args)})"
    if e.op in "+-":
        right = expr_text(e.right)
        if isinstance(e.right, BinOp) and e.right.op in "+-":
            right = f"({right})"
        elif isinstance(e.right, Num) and e.right.value < 0:
            right = f"({right})"
        return f"{expr_text(e.left)} {e.op} {right}"
    if e.op == "@":
        left = expr_text(e.left)
        if isinstance(e.left, BinOp) and e.left.op in "+-":
            left = f"({left})"
        return f"{left} @ {_factor(e.right)}"
    # scalar literal times factor
    return f"{format_number(e.left.value)} * {_factor(e.right)}"


def to_text(program):
    """Render ``program`` in canonical form, one statement per line."""
    lines = [program.signature.header(program.name) + " {"]
    lines += [f"  {st.target} = {expr_text(st.expr)}" for st in program.statements]
    lines.append("}")
    return "\n".join(lines) + "\n"
