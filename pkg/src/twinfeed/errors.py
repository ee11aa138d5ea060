"""Exception types shared across the package, with the process exit code each
maps to when it escapes the CLI."""


class TwinfeedError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ConfigurationError(TwinfeedError):
    """Invalid or inconsistent configuration values."""

    exit_code = 2


class TraceParseError(TwinfeedError):
    """Malformed trace or results file (IO and parse problems)."""

    exit_code = 3


class TrainingError(TwinfeedError):
    """Predictor training diverged or could not run."""

    exit_code = 4


class ProtocolError(TwinfeedError):
    """Feedback protocol contract violated (e.g. twin desynchronisation)."""

    exit_code = 5


class ShapeError(TwinfeedError):
    """Array dimensions do not match the declared layout."""


class NumericError(TwinfeedError):
    """Non-finite values where finite ones are required."""


class DegenerateInputError(TwinfeedError):
    """Input is mathematically degenerate for the requested metric."""
