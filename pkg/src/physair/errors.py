"""Exception hierarchy shared across the package."""


class PhysAirError(Exception):
    """Base class for all package errors."""


class ConfigError(PhysAirError, ValueError):
    pass


class SchemaError(PhysAirError, ValueError):
    pass


class DegenerateGeometry(PhysAirError, ValueError):
    pass


class InvalidCoordinate(PhysAirError, ValueError):
    pass


class NetworkTooSmall(PhysAirError, ValueError):
    pass


class ConstantFeature(PhysAirError, ValueError):
    pass


class SplitTooShort(PhysAirError, ValueError):
    pass


class ShapeError(PhysAirError, ValueError):
    pass


class NumericError(PhysAirError, ArithmeticError):
    pass


class StabilityError(PhysAirError, ValueError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
