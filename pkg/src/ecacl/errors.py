"""Exception hierarchy shared by the library and the command line."""


class EcaclError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigError(EcaclError, ValueError):
    exit_code = 2


class ShapeError(EcaclError, ValueError):
    exit_code = 2


class DimensionError(ShapeError):
    pass


class DomainError(EcaclError, ValueError):
    """An operation received a value outside its mathematical domain."""

    exit_code = 3


class NumericError(EcaclError, ArithmeticError):
    exit_code = 3


class CoverageError(EcaclError, ValueError):
    """A class required by an operation has no samples."""

    exit_code = 2


class ContractError(EcaclError, ValueError):
    exit_code = 3


class FormatError(EcaclError, OSError):
    exit_code = 4


class LengthError(FormatError):
    pass
