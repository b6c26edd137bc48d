"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(ValueError):
    """A caller violated an operation's precondition."""


class FormatError(ValueError):
    """An input file does not match the expected schema."""


class NumericsError(RuntimeError):
    """A computation produced non-finite values and was aborted."""
