"""Exception types shared across the package."""


class ArcodecError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(ArcodecError):
    """Invalid model configuration or parameter/shape mismatch."""


class InputError(ArcodecError):
    """Runtime input violates a documented precondition."""


class ParseError(ArcodecError):
    """Malformed annotation or detection file.

    ``line`` carries the 1-based line number when known.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericError(ArcodecError):
    """Non-finite value where a finite number is required."""


class FreezeError(ArcodecError):
    """Entropy model could not be frozen into a coding table."""


class EncodeError(ArcodecError):
    """Symbol stream cannot be entropy coded with the given table."""


class DecodeError(ArcodecError):
    """Payload cannot be decoded (truncated or inconsistent)."""


class FormatError(ArcodecError):
    """Container bytes violate the file format."""


class ModelMismatchError(ArcodecError):
    """Bitstream was produced by a different model than the one loaded."""
