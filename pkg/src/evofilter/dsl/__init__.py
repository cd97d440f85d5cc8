"""A small matrix language for state-estimation programs."""

from .ast import Program, Signature, Statement, generic_signature
from .compiler import compile_program, execute
from .errors import (
    ArityError,
    DslError,
    DslSyntaxError,
    EvalError,
    ScopeError,
    UnknownFunctionError,
)
from .interpreter import DEFAULT_GUARDS, GuardConfig, interpret
from .parser import parse
from .printer import to_text
from .transform import to_generic
from .validate import MAX_STATEMENTS, Violation, validate

__all__ = [
    "ArityError",
    "DEFAULT_GUARDS",
    "DslError",
    "DslSyntaxError",
    "EvalError",
    "GuardConfig",
    "MAX_STATEMENTS",
    "Program",
    "ScopeError",
    "Signature",
    "Statement",
    "UnknownFunctionError",
    "Violation",
    "compile_program",
    "execute",
    "generic_signature",
    "interpret",
    "parse",
    "to_generic",
    "to_text",
    "validate",
]
