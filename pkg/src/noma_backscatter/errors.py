"""Exception types shared across the package.

The CLI maps each family to an exit code (see ``cli.EXIT_CODES``).
"""


class NomaBackscatterError(Exception):
    """Base class for package errors."""


class ConfigError(NomaBackscatterError, ValueError):
    """Invalid scenario/solver configuration or mismatched inputs."""


class DegenerateChannelError(NomaBackscatterError, ValueError):
    """A closed form is undefined for the given channel (e.g. zero backscatter path)."""


class InfeasibleError(NomaBackscatterError):
    """No allocation meets the QoS constraints."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class CertificationError(NomaBackscatterError):
    """Solver output failed an oracle or invariant check."""
