"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: configuration and data problems exit
with 2, everything else derived from :class:`VmwattError` exits with 3.
"""


class VmwattError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 3


class ConfigError(VmwattError):
    """Invalid parameters or configuration files."""

    exit_code = 2


class DataError(VmwattError):
    """Input data that is missing, malformed or out of range."""

    exit_code = 2


class ParseError(DataError):
    """A file could not be parsed; the message carries the location."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        loc = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{loc}: {message}")


class SchemaError(DataError):
    """Feature names or column layout do not match."""


class UnsupportedVersionError(DataError):
    """Model file written by an incompatible format version."""


class JoinError(DataError):
    """Two logs could not be aligned."""


class FitError(DataError):
    """Training input rejected."""


class ShapeError(DataError):
    """Array arguments have incompatible lengths or widths."""


class UndefinedMetricError(DataError):
    """A metric is undefined for the given input (e.g. R² with constant truth)."""


class BoundViolationError(ConfigError):
    """An intensity function exceeded its declared upper bound."""


class CollectionError(VmwattError):
    """A metrics or power source could not be read or written."""


class TimingError(VmwattError):
    """Timestamps failed to advance between counter readings."""


class BackendGone(CollectionError):
    """The monitored backend disappeared (for example the VM process exited)."""
