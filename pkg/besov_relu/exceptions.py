"""Custom exceptions for the besov-relu package."""


class BesovReluError(Exception):
    """Base exception for all besov-relu package errors."""

    pass


class ParameterError(BesovReluError, ValueError):
    """Raised when a parameter violates its documented precondition.

    Args:
        message: Description of the violated precondition.

    Example:
        >>> eval_cardinal(-1, 0.5)  # doctest: +SKIP
        ParameterError: Spline order must be in [0, 24], got -1
    """

    pass


class DimensionMismatchError(BesovReluError, ValueError):
    """Raised when a point, index or layer has the wrong dimension.

    Args:
        what: Name of the object whose dimension is checked.
        expected: The required dimension.
        actual: The dimension that was provided.

    Example:
        >>> net.evaluate([1.0, 2.0, 3.0])  # doctest: +SKIP
        DimensionMismatchError: input has dimension 3, expected 2
    """

    def __init__(self, what: str, expected: int, actual: int) -> None:
        self.what = what
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what} has dimension {actual}, expected {expected}")


class NonFiniteError(BesovReluError, ArithmeticError):
    """Raised when a coefficient or network intermediate is not finite.

    Args:
        where: Location of the offending value (e.g. "layer 3").

    Example:
        >>> net.evaluate([1e308])  # doctest: +SKIP
        NonFiniteError: Non-finite value encountered in layer 2
    """

    def __init__(self, where: str) -> None:
        self.where = where
        super().__init__(f"Non-finite value encountered in {where}")


class BudgetError(BesovReluError, ValueError):
    """Raised when budget arithmetic fails or a term budget is violated.

    Example:
        >>> build_mult(2, 1e-15)  # doctest: +SKIP
        BudgetError: eps=1e-15 is below the supported floor 1e-12
    """

    pass


class SingularSystemError(BesovReluError, ArithmeticError):
    """Raised when a linear system cannot be solved even after ridge jitter."""

    pass


class ConfigError(BesovReluError, ValueError):
    """Raised when an experiment configuration is invalid.

    Args:
        field: The configuration field at fault.
        message: Description of the problem.

    Example:
        >>> ExperimentConfig.from_dict({"schema": 2})  # doctest: +SKIP
        ConfigError: Invalid config field 'schema': unsupported version 2
    """

    def __init__(self, field: str, message: str) -> None:
        self.field = field
        super().__init__(f"Invalid config field '{field}': {message}")


class AcceptanceError(BesovReluError):
    """Raised when an experiment misses an acceptance threshold in assert mode."""

    pass


class ExperimentInterrupted(BesovReluError):
    """Raised after an interrupted experiment flushed its partial results.

    Args:
        marker: Path of the resumption marker that was written.
        completed: Number of finished grid cells.
    """

    def __init__(self, marker: str, completed: int) -> None:
        self.marker = marker
        self.completed = completed
        super().__init__(f"Interrupted after {completed} cells; resume marker at {marker}")
