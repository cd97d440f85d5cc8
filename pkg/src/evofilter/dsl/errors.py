class DslError(Exception):
    """A program text or structure problem, located at ``line``/``col``."""

    reason = "invalid"

    def __init__(self, message, line=0, col=0):
        self.message = message
        self.line = line
        self.col = col
        where = f"{line}:{col}: " if line else ""
        super().__init__(f"{where}{message}")


class DslSyntaxError(DslError):
    reason = "syntax"


class ScopeError(DslError):
    reason = "use-before-assign"


class UnknownFunctionError(DslError):
    reason = "unknown-function"


class ArityError(DslError):
    reason = "arity"


class EvalError(Exception):
    """Runtime failure of a program.

    ``kind`` is one of ``singular``, ``non-finite``, ``shape-mismatch`` or
    ``step-limit``; ``statement`` is the index of the failing statement
    (-1 when the failure is outside the candidate's own statements).
    """

    KINDS = ("singular", "non-finite", "shape-mismatch", "step-limit")

    def __init__(self, kind, statement, message=""):
        if kind not in self.KINDS:
            raise ValueError(f"unknown EvalError kind {kind!r}")
        self.kind = kind
        self.statement = statement
        self.message = message
        super().__init__(f"{kind} at statement {statement}: {message}")
