"""Exception hierarchy shared across the package."""

from __future__ import annotations


class QlsivError(Exception):
    """Base class for all package errors."""


class RankDeficientError(QlsivError):
    """A design matrix does not have full column rank.

    Attributes
    ----------
    offending : tuple of str
        Labels of columns that are linearly dependent on the others.
    """

    def __init__(self, message: str, offending: tuple[str, ...] = ()):
        super().__init__(message)
        self.offending = offending


class ConvergenceError(QlsivError):
    """A solver failed to converge; carries the last iterate and objective gap."""

    def __init__(self, message: str, last_iterate=None, objective_gap=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.objective_gap = objective_gap


class DegenerateInstrumentError(QlsivError):
    """The (generated) instrument carries no usable variation.

    ``detail`` holds whatever quantity diagnosed the degeneracy, e.g. the
    smallest singular value of S'P_M S or the LASSO penalty that emptied
    the support.
    """

    def __init__(self, message: str, detail=None):
        super().__init__(message)
        self.detail = detail


class ConfigError(QlsivError):
    """Invalid study or command configuration."""


class DataError(QlsivError):
    """Malformed input data (CSV parse failures, missing columns, ...)."""
