"""Exception types shared across the package.

The command-line layer maps these onto process exit codes; library code only
raises them.  Anything that is a plain usage/precondition mistake (wrong
argument type, series too short, unknown option) raises ``ValueError`` /
``KeyError`` as usual.
"""

from __future__ import annotations


class CropcastError(Exception):
    """Base class for package-specific errors."""


class ValidationError(CropcastError):
    """Input panels failed validation; carries the full violation list."""

    def __init__(self, violations):
        self.violations = list(violations)
        detail = "; ".join(v.message for v in self.violations)
        super().__init__(f"{len(self.violations)} validation problem(s): {detail}")


class ShapeError(CropcastError):
    """Array shape inconsistent with the declared panel layout.

    ``axis`` names the offending axis when that is identifiable.
    """

    def __init__(self, message, axis=None):
        super().__init__(message)
        self.axis = axis


class ConfigError(CropcastError):
    """Run configuration is unusable (unknown family, bad enumeration, ...)."""


class NumericError(CropcastError):
    """A numeric routine produced a non-finite or out-of-domain result."""


class SupportError(NumericError):
    """Evaluation point lies outside the support of the distribution."""


class DomainError(NumericError):
    """Parameter outside the admissible range of the requested family."""


class FilterError(NumericError):
    """Kalman filtering broke down; ``iteration`` is the failing sweep index."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class FitError(NumericError):
    """Optimization failed; ``best`` carries the best parameters seen so far."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ArtifactError(CropcastError):
    """A file the package reads or writes is malformed or incompatible.

    Covers pipeline artifacts (wrong format version, missing manifest) as
    well as data CSVs whose content does not match the documented schema.
    """
