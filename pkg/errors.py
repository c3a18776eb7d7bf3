"""
Error Types
===========

Every failure the toolkit raises on purpose derives from RLGAFError. The
``code`` attribute is the machine-parseable reason the CLI prints as
``error[<code>]: <message>``.
"""

from typing import Optional


class RLGAFError(Exception):
    """Base class for all toolkit errors."""

    code = "error"


class InvalidInputError(RLGAFError):
    """Raised when an argument violates an operation's precondition."""

    code = "invalid-input"


class InvalidTokenError(InvalidInputError):
    """Raised when a token id falls outside the model vocabulary."""

    code = "invalid-token"


class StructuralError(RLGAFError):
    """Raised when a recorded computation cannot be differentiated."""

    code = "structural"


class ContractError(RLGAFError):
    """Raised when a caller-supplied function breaks its contract."""

    code = "contract"


class TrainingDivergenceError(RLGAFError):
    """Raised when gradients or parameters become non-finite or explode."""

    code = "training-divergence"


class ModeCollapseError(RLGAFError):
    """Raised when the loop is configured to halt on a collapse flag."""

    code = "mode-collapse"

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class CorpusParseError(RLGAFError):
    """Raised for a malformed corpus record."""

    code = "parse"

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class IncompletePairError(RLGAFError):
    """Raised when a tuned/base rating pair is missing."""

    code = "incomplete-pair"

    def __init__(self, message: str, missing: Optional[list] = None):
        self.missing = list(missing or [])
        if self.missing:
            message = f"{message}: {', '.join(map(str, self.missing))}"
        super().__init__(message)


class TransportError(RLGAFError):
    """Raised when a network or file transport fails."""

    code = "transport"


class UnparseableReplyError(RLGAFError):
    """Raised when a judge reply names no tier."""

    code = "unparseable-reply"

    def __init__(self, raw_text: str):
        super().__init__(f"no tier keyword in judge reply: {raw_text!r}")
        self.raw_text = raw_text


class CheckpointFormatError(RLGAFError):
    """Raised for a bad, truncated or version-mismatched checkpoint."""

    code = "format"


class ConfigError(RLGAFError):
    """Raised when a run configuration cannot be parsed or validated."""

    code = "config"
