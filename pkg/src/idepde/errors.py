"""Exception hierarchy shared by all modules."""


class IdePdeError(Exception):
    """Base class for package errors."""


class DomainError(IdePdeError, ValueError):
    """An argument lies outside the region where the operation is defined."""


class AlignmentError(DomainError):
    """A time or position does not fall on the shared grid."""


class DataError(IdePdeError, ValueError):
    """Malformed or non-finite numerical data."""


class EvaluationError(IdePdeError, ArithmeticError):
    """A functional produced a non-finite value."""


class GridTooCoarseError(IdePdeError):
    """The contraction window is shorter than one grid step."""

    def __init__(self, message: str, required_step: float):
        super().__init__(message)
        self.required_step = required_step


class ContractionError(IdePdeError):
    """Successive approximations failed to converge."""

    def __init__(self, message: str, factor: float):
        super().__init__(message)
        self.factor = factor


class CertificateError(IdePdeError):
    """A stability certificate is malformed or cannot be evaluated."""


class ConfigError(IdePdeError):
    """Scenario validation failure carrying every violation found."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = list(violations)
