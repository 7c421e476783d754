"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument is outside its documented domain."""


class InputError(ValueError):
    """Input data (rasters, files) cannot be processed."""


class NumericalError(ArithmeticError):
    """A computation produced non-finite values."""


class NonFiniteEnergyError(InputError, NumericalError):
    """The alignment energy is not finite for the given inputs."""
