"""Numerical global-local mixing for skew products over subshifts of finite type.

The package realizes, at desk scale, the spectral machinery behind mixing of
R-extensions of symbolic systems: Gibbs measures from transfer-operator
eigendata, twisted transfer operators and their contraction, oscillatory
cancellation diagnostics, and several independent correlation estimators.
"""

__version__ = "0.1.0"

from . import correlate, gibbs, observables, presets, skewprod, symbolic, twisted
from .errors import SkewmixError

__all__ = [
    "SkewmixError",
    "__version__",
    "correlate",
    "gibbs",
    "observables",
    "presets",
    "skewprod",
    "symbolic",
    "twisted",
]
