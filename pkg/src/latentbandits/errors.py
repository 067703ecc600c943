"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: validation errors exit 2, numerical
errors exit 3, io/format errors exit 4.
"""


class ValidationError(ValueError):
    """Bad arguments or an inconsistent configuration."""


class NotApplicableError(ValidationError):
    """An operation was invoked for a variant it does not cover."""


class EmptyFilterError(ValidationError):
    """Filtering removed every rating."""


class NumericalError(RuntimeError):
    """A numerical procedure failed or produced an unusable result."""


class SingularMatrixError(NumericalError):
    """A linear system that had to be invertible was singular."""


class NearSingularCorrectionError(NumericalError):
    """A correction matrix is too close to singular to invert."""


class VacuousBoundError(NumericalError):
    """The confidence-bound inputs make the bound vacuous."""


class DegenerateGapError(NumericalError):
    """The eigenvalue gap driving a perturbation bound is not positive."""


class FormatError(Exception):
    """An input data file does not follow its expected format."""
