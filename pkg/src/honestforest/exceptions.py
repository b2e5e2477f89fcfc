"""Exception hierarchy.

Each class carries the CLI exit code it maps to.
"""


class HonestForestError(Exception):
    exit_code = 1


class ParameterError(HonestForestError, ValueError):
    """Invalid parameter or schema violation."""

    exit_code = 2


class SchemaError(ParameterError):
    """Malformed input file."""


class UnsupportedOperationError(HonestForestError):
    """Operation needs information the dataset does not carry."""

    exit_code = 2


class DegenerateDataError(HonestForestError):
    """A sample lacks a treatment arm or is otherwise unusable."""

    exit_code = 3


class EmptyArmError(DegenerateDataError):
    pass


class ConvergenceError(HonestForestError):
    exit_code = 4

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SingularSystemError(HonestForestError, ArithmeticError):
    pass
