"""Exception hierarchy shared by the library and the CLI.

Every error carries a stable ``code`` (printed by the CLI as ``code=<NAME>``)
and the process exit status it maps to.
"""

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class DsglmError(Exception):
    code = "Error"
    exit_status = EXIT_NUMERIC


class UsageError(DsglmError, ValueError):
    code = "UsageError"
    exit_status = EXIT_USAGE


class DomainError(DsglmError, ValueError):
    """Argument outside the support of a link family."""

    code = "DomainError"
    exit_status = EXIT_NUMERIC


class DegenerateLabels(DsglmError, ValueError):
    code = "DegenerateLabels"
    exit_status = EXIT_DATA


class NonFinite(DsglmError, FloatingPointError):
    code = "NonFinite"
    exit_status = EXIT_NUMERIC

    def __init__(self, message, index=None):
        if index is not None:
            message = f"{message} (row {index})"
        super().__init__(message)
        self.index = index


class QuadratureFailure(DsglmError, ArithmeticError):
    code = "QuadratureFailure"
    exit_status = EXIT_NUMERIC


class UnsupportedDimension(DsglmError, ValueError):
    code = "UnsupportedDimension"
    exit_status = EXIT_USAGE


class SingularMoment(DsglmError, ValueError):
    """E[XX^T] is (numerically) singular."""

    code = "SingularMoment"
    exit_status = EXIT_NUMERIC


class EmptyGrid(DsglmError, ValueError):
    code = "EmptyGrid"
    exit_status = EXIT_NUMERIC


class MissingColumn(DsglmError, KeyError):
    code = "MissingColumn"
    exit_status = EXIT_DATA

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class NonBinaryLabel(DsglmError, ValueError):
    code = "NonBinaryLabel"
    exit_status = EXIT_DATA


class NonNumericFeature(DsglmError, ValueError):
    code = "NonNumericFeature"
    exit_status = EXIT_DATA


class EmptyFile(DsglmError, ValueError):
    code = "EmptyFile"
    exit_status = EXIT_DATA


class DegenerateSplit(DsglmError, RuntimeError):
    code = "DegenerateSplit"
    exit_status = EXIT_DATA
