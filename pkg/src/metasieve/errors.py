"""Exception hierarchy shared across the package."""


class MetasieveError(Exception):
    """Base class for all package errors."""


class IngestError(MetasieveError):
    """Registry dump could not be parsed.  Carries the byte offset when known."""

    def __init__(self, message: str, byte_offset: int | None = None):
        super().__init__(message)
        self.byte_offset = byte_offset


class SchemaError(MetasieveError):
    """A document violated its schema.  ``pointer`` is a JSON pointer to the offending node."""

    def __init__(self, message: str, pointer: str = ""):
        super().__init__(f"{pointer}: {message}" if pointer else message)
        self.pointer = pointer
        self.detail = message


class ConfigurationError(MetasieveError):
    """Invalid or missing configuration (unknown membership list, unresolvable P_max, ...)."""


class InputError(MetasieveError):
    """Caller-supplied data is invalid (negative penalty, mismatched study ids, ...)."""


class EstimationError(MetasieveError):
    """Pooling could not produce an estimate (zero numerator or denominator)."""


class GenerationError(MetasieveError):
    """Rule or plan generation failed (empty query, adapter missing fixture, ...)."""
