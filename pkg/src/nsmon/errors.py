"""Exception types raised across the package.

Every error is a subclass of :class:`NsmonError` so callers can catch the
whole family with one clause.  Errors carry enough context to be actionable
(offending column index, required sample count, ...).
"""


class NsmonError(Exception):
    """Base class for all package errors."""


class NonFiniteDataError(NsmonError):
    """Input contains NaN or infinite entries."""


class ConstantColumnError(NsmonError):
    """A column has (near) zero variance and cannot be standardized."""

    def __init__(self, column: int, variance: float = 0.0):
        self.column = column
        self.variance = variance
        super().__init__(f"column {column} is constant (variance {variance:.3e})")


class DimensionMismatchError(NsmonError):
    """Operand shapes are incompatible."""


class SeriesTooShortError(NsmonError):
    """Time series too short for the requested regression."""


class TooFewSamplesError(NsmonError):
    """Not enough rows for the requested model order or training step."""


class TooFewValuesError(NsmonError):
    """Not enough values to estimate a density threshold."""


class RankDeficientError(NsmonError):
    """Regressor Gram matrix is singular even after ridge regularization."""


class IndefiniteBError(NsmonError):
    """Denominator matrix of the generalized eigenproblem is not positive definite."""


class IndefiniteBlockError(NsmonError):
    """A diagonal block lost positive definiteness during the inverse-sqrt update."""


class NumericalBreakdownError(NsmonError):
    """A recursive update hit a denominator too close to zero."""


class NoCointegrationError(NsmonError):
    """The trace test found rank zero; no long-run relation to monitor."""


class AllZeroSpectrumError(NsmonError):
    """Every eigenvalue is zero; component selection is undefined."""


class NonPSDInputError(NsmonError):
    """A matrix required to be positive semidefinite is not."""


class UntrainedError(NsmonError):
    """Operation requires a trained pipeline state."""


class LengthMismatchError(NsmonError):
    """Paired sequences have different lengths."""


class InvalidConfigError(NsmonError):
    """A configuration value is out of range or inconsistent."""
