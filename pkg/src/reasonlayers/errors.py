"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Array dimensions do not agree."""


class SymmetryError(ValueError):
    """A matrix that must be symmetric is not."""


class NumericalError(ArithmeticError):
    """An iterative routine failed to converge."""


class SpectrumError(ValueError):
    """Eigenvalues fall outside the admissible [mu, L] band."""


class DomainError(ValueError):
    """A parameter lies outside the domain where a formula is defined."""


class InconsistencyError(ValueError):
    """A cached trace or forward state does not match the call it is used with."""


class TrainingFailure(RuntimeError):
    """Every learning rate in a grid search diverged."""
