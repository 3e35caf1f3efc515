"""Exception hierarchy shared by all solver modules.

Configuration problems map to exit code 2 and numerical failures to exit code 3;
the CLI reads the ``exit_code`` attribute rather than matching on class names.
"""

from src.config.settings import EXIT_CODES


class BsvieError(Exception):
    """Base class for every error raised by this package."""

    exit_code = EXIT_CODES["numerical_failure"]


class ConfigurationError(BsvieError):
    """Inputs, grids or configuration values are inconsistent."""

    exit_code = EXIT_CODES["config_error"]


class NumericalError(BsvieError):
    """A computation produced unusable numbers or failed to converge."""

    exit_code = EXIT_CODES["numerical_failure"]


class ConfigInvalid(ConfigurationError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class GridMismatch(ConfigurationError):
    pass


class WindowOutsideGrid(ConfigurationError):
    pass


class BadExponent(ConfigurationError):
    pass


class DegenerateInterval(ConfigurationError):
    pass


class MissingLowerTriangle(ConfigurationError):
    pass


class KernelParamsInvalid(ConfigurationError):
    pass


class NonFiniteCoefficient(NumericalError):
    pass


class EllipticityViolated(NumericalError):
    pass


class NonFiniteState(NumericalError):
    pass


class NonFiniteField(NumericalError):
    pass


class TridiagonalSingular(NumericalError):
    pass


class NoContraction(NumericalError):
    pass


class MaxIterExceeded(NumericalError):
    pass


class PathOutsideDomain(NumericalError):
    def __init__(self, message, excluded=0, total=0):
        super().__init__(message)
        self.excluded = excluded
        self.total = total
