"""Exception hierarchy.

Every error carries a machine-readable ``category`` and the process exit code
the CLI maps it to.
"""

from __future__ import annotations


class CrossRetError(Exception):
    category = "error"
    exit_code = 1


class ShapeError(CrossRetError, ValueError):
    category = "shape"
    exit_code = 3


class NonFiniteError(CrossRetError, ValueError):
    category = "non-finite"
    exit_code = 4


class DegenerateInputError(CrossRetError, ValueError):
    """Zero norms, near-zero denominators, non-positive degrees."""

    category = "degenerate"
    exit_code = 5


class UnknownIdentifierError(CrossRetError, KeyError):
    category = "lookup"
    exit_code = 6

    def __str__(self) -> str:
        # KeyError quotes its argument; keep the plain message.
        return str(self.args[0]) if self.args else ""


class VocabularyError(CrossRetError, ValueError):
    category = "vocabulary"
    exit_code = 7


class ContractError(CrossRetError, ValueError):
    """A documented precondition was violated by the caller."""

    category = "contract"
    exit_code = 8


class ParseError(CrossRetError, ValueError):
    category = "parse"
    exit_code = 9

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(ParseError):
    category = "validation"
    exit_code = 10


class EvaluationError(CrossRetError, ArithmeticError):
    """A loss or objective evaluated to a non-finite value."""

    category = "evaluation"
    exit_code = 11


EXIT_CODES = {
    cls.category: cls.exit_code
    for cls in (
        CrossRetError,
        ShapeError,
        NonFiniteError,
        DegenerateInputError,
        UnknownIdentifierError,
        VocabularyError,
        ContractError,
        ParseError,
        ValidationError,
        EvaluationError,
    )
}
