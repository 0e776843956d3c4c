"""Exception types shared across the package."""

from __future__ import annotations


class SkewmixError(Exception):
    """Base class for all package errors."""


class NotMixing(SkewmixError):
    """The transition matrix is not primitive (no power is entrywise positive)."""


class DeadSymbol(SkewmixError):
    """A symbol has no allowed successor or no allowed predecessor."""


class DepthMismatch(SkewmixError):
    """Two words of different depths were combined."""


class InadmissibleWord(SkewmixError):
    """A word violates the transition matrix."""


class DepthTooSmall(SkewmixError):
    """The requested state depth cannot resolve the data's dependence."""


class NoConvergence(SkewmixError):
    """An iterative solver did not reach the requested tolerance."""


class WordTooShort(SkewmixError):
    """A word is too short for the requested Birkhoff window."""


class BudgetExceeded(SkewmixError):
    """A combinatorial enumeration exceeded its configured budget."""


class ToleranceUndefined(SkewmixError):
    """A tolerance equation has no solution (right-hand side out of range)."""


class NotNice(SkewmixError):
    """An observable fails the niceness preconditions (modulus band or seminorm)."""


class NotPositive(SkewmixError):
    """A spectral measure expected to be positive has negative or complex mass."""


class InsufficientData(SkewmixError):
    """A fit was requested with too few data points."""


class DegenerateWindow(SkewmixError):
    """A rate-fit window has too few usable points."""


class ConfigError(SkewmixError):
    """A configuration file or override is invalid; message names the field path."""


class QuadratureWarning(UserWarning):
    """Density resolution is too coarse for the requested frequency band."""
