"""Exception types shared across the package."""


class StarGraphError(Exception):
    """Base class for all errors raised by stargraph."""

    kind = "error"


class FormatError(StarGraphError, ValueError):
    """Malformed input file (triples, graph cache, vocabulary, checkpoint)."""

    kind = "format"


class ChecksumError(StarGraphError):
    """A derived artifact was built from a different graph."""

    kind = "checksum"


class ConfigError(StarGraphError, ValueError):
    kind = "config"


class NumericError(StarGraphError, FloatingPointError):
    """Non-finite values where finite ones are required."""

    kind = "numeric"
