"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where finite values are required."""


class SymmetryError(NumericError):
    """An inverse DFT produced a significant imaginary part."""


class ConfigError(ValueError):
    """Invalid model, training or run configuration."""
