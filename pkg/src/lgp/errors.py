"""Exception types shared across the package.

Exit-code mapping used by the CLI: ConfigError -> 1, RemoteError -> 3,
every other LgpError -> 2.
"""


class LgpError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(LgpError):
    """An operation received an argument outside its domain (empty, non-finite, ...)."""


class ShapeError(LgpError):
    """Operand dimensions do not agree."""


class DegenerateInputError(LgpError):
    """Numerically degenerate input, e.g. a zero-norm vector fed to cosine."""


class ParseError(LgpError):
    """A data file could not be parsed; message carries the offending line number."""


class ValidationError(LgpError):
    """A data file parsed but violates an invariant (duplicate ids, overlapping splits)."""


class ConfigError(LgpError):
    """Run configuration is invalid (unknown keys, bad types, out-of-range values)."""


class FormatError(LgpError):
    """A binary/JSON artifact has the wrong header, version, or record shape."""


class LookupMissError(LgpError):
    """A required key is absent from an embedding store."""

    def __init__(self, message: str, keys=()):
        super().__init__(message)
        self.keys = tuple(keys)


class SamplingError(LgpError):
    """Episode sampling could not satisfy the protocol; message names the class."""


class RemoteError(LgpError):
    """A remote description request failed; message carries HTTP/status detail."""


class DegenerateMetricError(LgpError):
    """A metric is undefined for an episode (e.g. every class single-sided for AUC)."""


class TrainingError(LgpError):
    """Training aborted, e.g. on a non-finite loss."""
