"""Exception hierarchy shared across the package.

Every error raised on purpose derives from StepsmithError so callers can
catch the whole family with one clause. The subclasses map onto the CLI
exit codes: bad input data (simfiles, audio, datasets) exits 2, numeric
failures (tempo estimation, divergence) exit 3.
"""


class StepsmithError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(StepsmithError):
    """Bad command line or configuration input; CLI exits 1."""


class SimfileError(StepsmithError):
    """Malformed simfile text or chart data that cannot be represented."""


class SimfileWarning(UserWarning):
    """Recoverable oddity in simfile input, e.g. a degraded note type."""


class AudioError(StepsmithError):
    """Unreadable or unsupported audio input."""


class TempoError(StepsmithError):
    """Tempo estimation cannot produce a usable answer."""


class DataError(StepsmithError):
    """Dataset assembly or split constraints cannot be met."""


class NumericError(StepsmithError):
    """Training or inference hit a non-finite or otherwise unusable state."""


class CheckpointError(StepsmithError):
    """Weights file is missing, corrupt, or incompatible."""
