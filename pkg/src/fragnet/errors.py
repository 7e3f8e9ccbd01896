"""Exception types shared across the package."""


class FragnetError(Exception):
    """Base class for package-specific errors."""


class StaleNodeError(FragnetError, KeyError):
    """A node reference points at a node that was removed or contracted."""


class EdgeListError(FragnetError, ValueError):
    """Malformed edge-list / mask / label-map input."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class FormatVersionError(FragnetError, ValueError):
    """A versioned file carries an unknown or missing format header."""


class MetricUndefinedError(FragnetError, ValueError):
    """A metric is undefined for the given input (e.g. single-class AUC)."""


class InvariantError(FragnetError, RuntimeError):
    """An internal consistency check failed; state must not be trusted."""
