"""Exception taxonomy shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for all errors raised by gesturemem."""


class ConfigError(ToolkitError):
    """Invalid or inconsistent configuration."""


class ParseError(ToolkitError):
    """Malformed record in an input file; carries the offending line number."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class DataIntegrityError(ToolkitError):
    """Structurally valid input that violates a dataset invariant (e.g. frame gaps)."""


class NonFiniteError(ToolkitError):
    """NaN or infinity where finite values are required."""


class ContractError(ToolkitError):
    """A caller-side precondition was violated (e.g. unnormalized feature)."""


class StructuralError(ToolkitError):
    """Shape or length mismatch between arrays that must agree."""


class EmptyMemoryError(ToolkitError):
    """Addressing was requested against a queue with no filled slots."""


class CheckpointError(ToolkitError):
    """Unreadable, corrupt, or version-incompatible checkpoint file."""
