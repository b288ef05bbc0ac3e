r"""
Exceptions raised by biasfilter.

Every error subclasses :class:`BiasfilterError` and the closest builtin exception, so callers
can catch either.
"""


class BiasfilterError(Exception):
    """Base class of all biasfilter errors."""


class UnknownSymbol(BiasfilterError, KeyError):
    """A character cannot be mapped to any vocabulary entry."""

    def __str__(self):
        return Exception.__str__(self)


class InvalidPhrase(BiasfilterError, ValueError):
    pass


class NumericalError(BiasfilterError, ArithmeticError):
    r"""
    Non-finite values appeared in a forward or backward pass.

    Parameters
    ----------
    block : str
        Name of the layer or parameter block where the values were detected.
    """

    def __init__(self, block, message=None):
        self.block = block
        super().__init__(message or f"Non-finite values in '{block}'.")


class ConfigError(BiasfilterError, ValueError):
    pass


class ConfigMismatch(BiasfilterError, ValueError):
    """Checkpoint and corpus do not agree (e.g. different vocabularies)."""


class CorpusError(BiasfilterError, ValueError):
    pass


class TrainingDiverged(BiasfilterError, ArithmeticError):
    r"""
    The training loss became non-finite.

    Parameters
    ----------
    trace : pd.DataFrame
        Loss trace recorded up to the failing epoch.
    """

    def __init__(self, trace, message="Training loss became non-finite."):
        self.trace = trace
        super().__init__(message)
