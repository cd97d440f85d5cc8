import math
from dataclasses import dataclass

from .ast import Num, references, walk

MAX_STATEMENTS = 64


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    statement: int = -1

    def __str__(self):
        return f"{self.kind}: {self.message}"


def validate(program, signature=None, max_statements=MAX_STATEMENTS):
    """Check ``program`` against ``signature`` (default: its own).

    Returns a list of :class:`Violation`; an empty list means the program
    is acceptable. Kinds: ``signature``, ``use-before-assign``,
    ``unassigned output``, ``size budget``, ``constant``.
    """
    out = []
    sig = signature or program.signature
    if program.signature.inputs != sig.inputs or program.signature.outputs != sig.outputs:
        out.append(
            Violation(
                "signature",
                f"expected {sig.header()} but program declares "
                f"{program.signature.header()}",
            )
        )
    defined = set(sig.inputs)
    assigned = set()
    for idx, st in enumerate(program.statements):
        for ref in references(st.expr):
            if ref.name not in defined:
                out.append(Violation("use-before-assign", f"{ref.name!r} is not bound", idx))
        for node in walk(st.expr):
            if isinstance(node, Num) and not math.isfinite(node.value):
                out.append(Violation("constant", f"non-finite constant {node.value}", idx))
        defined.add(st.target)
        assigned.add(st.target)
    for name in sig.outputs:
        if name not in assigned:
            out.append(Violation("unassigned output", f"output {name!r} is never assigned"))
    if len(program.statements) > max_statements:
        out.append(
            Violation(
                "size budget",
                f"{len(program.statements)} statements exceed the limit of {max_statements}",
            )
        )
    return out
