"""Exception hierarchy shared by every mxpool module."""


class MxPoolError(Exception):
    """Base class for all errors raised by mxpool."""


class FormatError(MxPoolError):
    """A dataset file is missing or cannot be parsed."""


class IntegrityError(MxPoolError):
    """Dataset files parse but contradict each other."""


class ConfigurationError(MxPoolError, ValueError):
    """Invalid hyperparameters, fold requests or CLI options."""


class ShapeError(MxPoolError, ValueError):
    """Operand shapes do not agree."""


class ContractError(MxPoolError):
    """A caller violated an operation's precondition."""
